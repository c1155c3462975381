//! Standard normal distribution functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Above this point the survival function is evaluated through its log.
pub const LOG_TAIL_SWITCH: f64 = 8.0;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Ψ(x) = 1 − Φ(x), accurate in the far right tail.
pub fn sf(x: f64) -> f64 {
    if x > LOG_TAIL_SWITCH {
        return log_sf(x).exp();
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// ln Ψ(x). Uses the Mills-ratio continued fraction past [`LOG_TAIL_SWITCH`],
/// where Ψ itself eventually underflows.
pub fn log_sf(x: f64) -> f64 {
    if x <= LOG_TAIL_SWITCH {
        return (0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln();
    }
    -0.5 * x * x - 0.5 * (2.0 * PI).ln() + mills_ratio(x).ln()
}

/// Ψ(x)/φ(x) for large positive x, by the continued fraction
/// 1/(x + 1/(x + 2/(x + 3/(x + ...)))) evaluated with modified Lentz.
fn mills_ratio(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}
