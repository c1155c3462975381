//! Closed-form quantities: normalizers, the variance and correlation of the
//! two-parameter field Y(s,t), ruin-probability asymptotics, limit laws and
//! field-supremum asymptotics.
//!
//! Notation: t̃₀ = H/(c(1−H)) is where the variance of
//! Y(s,t) = (X_H(t) − γX_H(s))/(1 + c(t − γs)) peaks (at s = 0), and
//! σ_max = H^H (1−H)^{1−H}/c^H is the peak standard deviation.

use serde::{Deserialize, Serialize};

use crate::constants::{check_alpha, pickands_closed, piterbarg_closed, EstimateWithError};
use crate::error::{ensure, Error, Result};
use crate::fbm::fbm_cov_unchecked;
use crate::model::ModelParams;
use crate::normal;

pub fn t_tilde0(params: &ModelParams) -> f64 {
    let h = params.hurst;
    h / (params.drift * (1.0 - h))
}

/// A(u) = H^{H+½} u^H / ((1−H)^{H+½} c^{H+1}).
pub fn a_scale(params: &ModelParams, u: f64) -> Result<f64> {
    ensure(u > 0.0, "u", u, "must be positive")?;
    let h = params.hurst;
    Ok((h / (1.0 - h)).powf(h + 0.5) * u.powf(h) / params.drift.powf(h + 1.0))
}

/// H^{½} / (c (1−H)^{3/2}).
pub fn a_const(params: &ModelParams) -> f64 {
    let h = params.hurst;
    h.sqrt() / (params.drift * (1.0 - h).powf(1.5))
}

/// V_Y(0, t̃₀) = H^H (1−H)^{1−H} / c^H.
pub fn sigma_max(params: &ModelParams) -> f64 {
    let h = params.hurst;
    h.powf(h) * (1.0 - h).powf(1.0 - h) / params.drift.powf(h)
}

/// ũ = u^{1−H} / σ_max.
pub fn u_tilde(params: &ModelParams, u: f64) -> Result<f64> {
    ensure(u > 0.0, "u", u, "must be positive")?;
    Ok(u.powf(1.0 - params.hurst) / sigma_max(params))
}

/// All level-dependent normalizers at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub u: f64,
    pub t_tilde0: f64,
    pub a_of_u: f64,
    pub u_tilde: f64,
    pub a_const: f64,
}

impl ScalingParams {
    pub fn new(params: &ModelParams, u: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            u,
            t_tilde0: t_tilde0(params),
            a_of_u: a_scale(params, u)?,
            u_tilde: u_tilde(params, u)?,
            a_const: a_const(params),
        })
    }
}

/// Variance numerator Var(X_H(t) − γX_H(s)) for s ≤ t.
fn numerator_var(s: f64, t: f64, params: &ModelParams) -> f64 {
    let (g, h2) = (params.gamma, 2.0 * params.hurst);
    (1.0 - g) * t.powf(h2) + (g * g - g) * s.powf(h2) + g * (t - s).powf(h2)
}

/// Standard deviation V_Y(s,t) of Y(s,t), for 0 ≤ s ≤ t.
pub fn var_y(s: f64, t: f64, params: &ModelParams) -> Result<f64> {
    ensure(s >= 0.0, "s", s, "must be nonnegative")?;
    ensure(t >= s, "s", s, "must not exceed t")?;
    let denom = 1.0 + params.drift * (t - params.gamma * s);
    Ok(numerator_var(s, t, params).max(0.0).sqrt() / denom)
}

/// Leading-order value of 1 − V_Y(s,t)/σ_max near (0, t̃₀). The H ≤ ½
/// branch is used at H = ½.
pub fn var_expansion(s: f64, t: f64, params: &ModelParams) -> f64 {
    let (h, g, c) = (params.hurst, params.gamma, params.drift);
    let t0 = t_tilde0(params);
    let lin = if h <= 0.5 { t0 - t } else { t0 - t + g * s };
    let quad = c * c * (1.0 - h).powi(3) / (2.0 * h) * lin * lin;
    let cross = (g - g * g) * (1.0 - h).powf(2.0 * h) * c.powf(2.0 * h) / (2.0 * h.powf(2.0 * h)) * s.powf(2.0 * h);
    quad + cross
}

/// Exact correlation of Y(s,t) and Y(s',t').
pub fn corr_y(s: f64, s2: f64, t: f64, t2: f64, params: &ModelParams) -> Result<f64> {
    for (a, b) in [(s, t), (s2, t2)] {
        ensure(a >= 0.0, "s", a, "must be nonnegative")?;
        ensure(b >= a, "s", a, "must not exceed t")?;
    }
    let (g, h) = (params.gamma, params.hurst);
    let cov = |a: f64, b: f64| fbm_cov_unchecked(a, b, h);
    let cross = cov(t, t2) - g * cov(t, s2) - g * cov(s, t2) + g * g * cov(s, s2);
    let v1 = numerator_var(s, t, params);
    let v2 = numerator_var(s2, t2, params);
    Ok(cross / (v1 * v2).sqrt())
}

/// Leading-order value of 1 − Corr(Y(s,t), Y(s',t')) near (0, t̃₀).
pub fn corr_expansion(s: f64, s2: f64, t: f64, t2: f64, params: &ModelParams) -> f64 {
    let h2 = 2.0 * params.hurst;
    let g = params.gamma;
    ((t - t2).abs().powf(h2) + g * g * (s - s2).abs().powf(h2)) / (2.0 * t_tilde0(params).powf(h2))
}

/// Location and value of the largest V_Y over a uniform grid on
/// {0 ≤ s ≤ t ≤ t_max} with `n` intervals per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArgmax {
    pub s: f64,
    pub t: f64,
    pub value: f64,
    pub cell: f64,
}

pub fn argmax_var_y(params: &ModelParams, t_max: f64, n: usize) -> Result<GridArgmax> {
    params.validate()?;
    ensure(t_max > 0.0, "t_max", t_max, "must be positive")?;
    ensure(n >= 1, "n", n as f64, "must be at least 1")?;
    let cell = t_max / n as f64;
    let mut best = GridArgmax {
        s: 0.0,
        t: 0.0,
        value: f64::NEG_INFINITY,
        cell,
    };
    for j in 0..=n {
        let t = j as f64 * cell;
        for i in 0..=j {
            let s = i as f64 * cell;
            let v = var_y(s, t, params)?;
            if v > best.value {
                best = GridArgmax { s, t, value: v, cell };
            }
        }
    }
    Ok(best)
}

/// Source of a constant used in a formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantPair {
    /// Pickands constant.
    pub pickands: EstimateWithError,
    /// Piterbarg constant.
    pub piterbarg: EstimateWithError,
}

impl ConstantPair {
    fn relative_error(&self) -> f64 {
        self.pickands.relative_error().hypot(self.piterbarg.relative_error())
    }
}

/// Closed forms when available, otherwise the supplied estimates.
fn resolve_constants(alpha: f64, a: f64, supplied: Option<&ConstantPair>, what: &str) -> Result<ConstantPair> {
    match (pickands_closed(alpha), piterbarg_closed(alpha, a)) {
        (Some(h), Some(p)) => Ok(ConstantPair {
            pickands: EstimateWithError::closed(h),
            piterbarg: EstimateWithError::closed(p),
        }),
        _ => supplied.copied().ok_or_else(|| {
            Error::NeedsEstimatedConstant(format!(
                "{what}: no closed form for H_{alpha} or P_{alpha}^{a}; supply Monte Carlo estimates"
            ))
        }),
    }
}

/// Pickands/Piterbarg constants entering the ruin asymptotic:
/// H_{2H} and P_{2H}^{(1−γ)/γ}.
pub fn ruin_constants(params: &ModelParams, supplied: Option<&ConstantPair>) -> Result<ConstantPair> {
    params.validate()?;
    params.require_interior_gamma()?;
    let a = (1.0 - params.gamma) / params.gamma;
    resolve_constants(2.0 * params.hurst, a, supplied, "ruin probability")
}

/// Asymptotic ruin probability with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinApprox {
    pub u: f64,
    /// Approximation, clamped to at most 1.
    pub value: f64,
    /// Unclamped natural log.
    pub log_value: f64,
    /// Propagated from estimated constants (zero for closed forms).
    pub std_error: f64,
    /// The raw formula exceeded 1; u is too small for the asymptotic.
    pub clamped: bool,
    pub constants: ConstantPair,
}

/// 𝒲_H(u)·Ψ(ũ) with 𝒲_H(u) = 2^{½−1/(2H)} √π/√(H(1−H)) H_{2H} P_{2H}^{(1−γ)/γ} ũ^{1/H−1},
/// evaluated in log space.
pub fn ruin_prob_approx(u: f64, params: &ModelParams, supplied: Option<&ConstantPair>) -> Result<RuinApprox> {
    let constants = ruin_constants(params, supplied)?;
    let h = params.hurst;
    let x = u_tilde(params, u)?;
    let log_w = (0.5 - 0.5 / h) * std::f64::consts::LN_2 + 0.5 * std::f64::consts::PI.ln()
        - 0.5 * (h * (1.0 - h)).ln()
        + constants.pickands.value.ln()
        + constants.piterbarg.value.ln()
        + (1.0 / h - 1.0) * x.ln();
    let log_value = log_w + normal::log_sf(x);
    let clamped = log_value > 0.0;
    if clamped {
        log::warn!("ruin asymptotic exceeds 1 at u = {u}; clamping");
    }
    let value = log_value.exp().min(1.0);
    Ok(RuinApprox {
        u,
        value,
        log_value,
        std_error: value * constants.relative_error(),
        clamped,
        constants,
    })
}

/// The H = ½ form of the ruin asymptotic after replacing Ψ by its
/// Mills-ratio leading term: e^{−2cu}/(1−γ).
pub fn ruin_prob_half_hurst(u: f64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    params.require_interior_gamma()?;
    ensure(params.hurst == 0.5, "hurst", params.hurst, "the reduced form needs H = 0.5")?;
    ensure(u > 0.0, "u", u, "must be positive")?;
    Ok((-2.0 * params.drift * u).exp() / (1.0 - params.gamma))
}

/// Leading-order ruin probability used as the prediction in experiments:
/// the reduced form at H = ½, the general asymptotic otherwise.
pub fn ruin_prob_leading(u: f64, params: &ModelParams, supplied: Option<&ConstantPair>) -> Result<f64> {
    if params.hurst == 0.5 {
        ruin_prob_half_hurst(u, params)
    } else {
        Ok(ruin_prob_approx(u, params, supplied)?.value)
    }
}

/// Limit CDF of either standardized passage time: Φ(x).
pub fn limit_cdf_tau(x: f64) -> f64 {
    normal::cdf(x)
}

/// Limit joint CDF of the standardized pair: Φ(min(x, y)).
pub fn joint_limit_cdf(x: f64, y: f64) -> f64 {
    normal::cdf(x.min(y))
}

/// Local structure of a field with unit maximal variance at (0, t₀):
/// 1 − σ(s,t) ≈ b₁s^β + b₂|t−t₀|² + b₃ s|t−t₀| and
/// 1 − r ≈ a₁|s−s'|^β + a₂|t−t'|^β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub beta: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub a1: f64,
    pub a2: f64,
    pub t0: f64,
}

impl FieldSpec {
    pub fn new(beta: f64, b1: f64, b2: f64, b3: f64, a1: f64, a2: f64, t0: f64) -> Result<Self> {
        let spec = Self {
            beta,
            b1,
            b2,
            b3,
            a1,
            a2,
            t0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// β ∈ (0,1) ∪ (1,2]; b₃ ≠ 0 only for β ∈ (1,2); b₂ + b₃/2 > 0.
    pub fn validate(&self) -> Result<()> {
        ensure(self.beta > 0.0 && self.beta <= 2.0, "beta", self.beta, "must lie in (0, 2]")?;
        ensure(self.beta != 1.0, "beta", self.beta, "beta = 1 is not covered")?;
        if self.b3 != 0.0 {
            ensure(
                self.beta > 1.0 && self.beta < 2.0,
                "b3",
                self.b3,
                "a cross term needs beta in (1, 2)",
            )?;
        }
        ensure(self.b1 > 0.0 && self.b1.is_finite(), "b1", self.b1, "must be positive")?;
        ensure(self.b2 > 0.0 && self.b2.is_finite(), "b2", self.b2, "must be positive")?;
        ensure(self.b3.is_finite(), "b3", self.b3, "must be finite")?;
        ensure(self.b2 + self.b3 / 2.0 > 0.0, "b3", self.b3, "needs b2 + b3/2 > 0")?;
        ensure(self.a1 > 0.0 && self.a1.is_finite(), "a1", self.a1, "must be positive")?;
        ensure(self.a2 > 0.0 && self.a2.is_finite(), "a2", self.a2, "must be positive")?;
        ensure(self.t0.is_finite(), "t0", self.t0, "must be finite")
    }

    /// Weight (1 + b₁s^β)(1 + b₂|t−t₀|² + b₃|t−t₀|s) of the canonical field.
    pub fn weight(&self, s: f64, t: f64) -> f64 {
        let d = (t - self.t0).abs();
        (1.0 + self.b1 * s.abs().powf(self.beta)) * (1.0 + self.b2 * d * d + self.b3 * d * s.abs())
    }

    /// Exact standard deviation 1/weight of the canonical field.
    pub fn sigma(&self, s: f64, t: f64) -> f64 {
        1.0 / self.weight(s, t)
    }

    /// Leading-order 1 − σ(s,t).
    pub fn sigma_expansion(&self, s: f64, t: f64) -> f64 {
        let d = (t - self.t0).abs();
        self.b1 * s.abs().powf(self.beta) + self.b2 * d * d + self.b3 * s.abs() * d
    }

    /// Correlation exp(−a₁|s−s'|^β − a₂|t−t'|^β) of the canonical field.
    pub fn correlation(&self, s: f64, s2: f64, t: f64, t2: f64) -> f64 {
        (-self.a1 * (s - s2).abs().powf(self.beta) - self.a2 * (t - t2).abs().powf(self.beta)).exp()
    }
}

/// Axis-aligned rectangle [s_lo, s_hi] × [t_lo, t_hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub s_lo: f64,
    pub s_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Rect {
    pub fn new(s_lo: f64, s_hi: f64, t_lo: f64, t_hi: f64) -> Result<Self> {
        if !(s_lo <= s_hi && t_lo <= t_hi) {
            return Err(Error::EmptyRegion(format!("[{s_lo}, {s_hi}] x [{t_lo}, {t_hi}]")));
        }
        Ok(Self { s_lo, s_hi, t_lo, t_hi })
    }

    pub fn contains(&self, s: f64, t: f64) -> bool {
        s >= self.s_lo && s <= self.s_hi && t >= self.t_lo && t <= self.t_hi
    }
}

/// Which rectangle of the pair: t below `t₀ + x/u`, or above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    First,
    Second,
}

/// δ₁(u) = (ln u/u)^{2/β}, δ₂(u) = ln u/u.
pub fn deltas(u: f64, beta: f64) -> Result<(f64, f64)> {
    ensure(u > 1.0, "u", u, "must exceed 1")?;
    let d2 = u.ln() / u;
    Ok((d2.powf(2.0 / beta), d2))
}

/// Δ¹ₓ(u) = [0,δ₁]×[t₀−δ₂, t₀+x/u] or Δ²ₓ(u) = [0,δ₁]×[t₀+x/u, t₀+δ₂].
pub fn delta_region(u: f64, x: f64, spec: &FieldSpec, side: Side) -> Result<Rect> {
    spec.validate()?;
    let (d1, d2) = deltas(u, spec.beta)?;
    let mid = spec.t0 + x / u;
    match side {
        Side::First => Rect::new(0.0, d1, spec.t0 - d2, mid),
        Side::Second => Rect::new(0.0, d1, mid, spec.t0 + d2),
    }
}

pub fn delta_regions(u: f64, x: f64, spec: &FieldSpec) -> Result<(Rect, Rect)> {
    Ok((delta_region(u, x, spec, Side::First)?, delta_region(u, x, spec, Side::Second)?))
}

/// H_β and P_β^{b₁/a₁} for a field spec.
pub fn field_constants(spec: &FieldSpec, supplied: Option<&ConstantPair>) -> Result<ConstantPair> {
    spec.validate()?;
    check_alpha(spec.beta)?;
    resolve_constants(spec.beta, spec.b1 / spec.a1, supplied, "field supremum")
}

/// Leading-order P(sup over Δ^side_x(u) > u):
/// √(π/b₂) a₂^{1/β} P_β^{b₁/a₁} H_β u^{2/β−1} Ψ(u) · Φ(√(2b₂)x) (first side)
/// or · Ψ(√(2b₂)x) (second side). With `limit_first` the first-side factor
/// Φ(·) is replaced by its x → ∞ value 1.
pub fn field_sup_asymptotic(
    u: f64,
    x: f64,
    spec: &FieldSpec,
    side: Side,
    limit_first: bool,
    supplied: Option<&ConstantPair>,
) -> Result<f64> {
    let c = field_constants(spec, supplied)?;
    ensure(u > 0.0, "u", u, "must be positive")?;
    let beta = spec.beta;
    let base = (std::f64::consts::PI / spec.b2).sqrt()
        * spec.a2.powf(1.0 / beta)
        * c.piterbarg.value
        * c.pickands.value
        * u.powf(2.0 / beta - 1.0)
        * normal::sf(u);
    let z = (2.0 * spec.b2).sqrt() * x;
    let factor = match (side, limit_first) {
        (Side::First, true) => 1.0,
        (Side::First, false) => normal::cdf(z),
        (Side::Second, _) => normal::sf(z),
    };
    Ok(base * factor)
}
