//! Pickands constants H_α and Piterbarg constants P_α^a.
//!
//! Truncated versions are expectations of `exp(sup (√2 B_α(t) − w|t|^α))`
//! with w = 1 (Pickands, t ∈ [0,T]) or w = 1 + a (Piterbarg, t ∈ [S,T]),
//! where B_α is fBm with Hurst index α/2. At α = 2 the process is exactly
//! `B_2(t) = t·Z` and is sampled as such.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fbm::{FbmSampler, FbmScratch, Grid, StationarySampler};
use crate::mc::{map_reduce, Moments, PairMoments, SeedStream};
use crate::normal;

/// Per-replicate exponents above this are capped (and counted).
pub const EXP_CAP: f64 = 30.0;

/// Default number of grid intervals on a truncation interval.
pub const DEFAULT_STEPS: usize = 1 << 12;

/// Default ceiling on `replicates × grid points`.
pub const DEFAULT_BUDGET: u64 = 20_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
    pub replicates: u64,
    pub method: EstimateMethod,
}

impl EstimateWithError {
    pub fn closed(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            replicates: 0,
            method: EstimateMethod::ClosedForm,
        }
    }

    pub fn from_moments(m: &Moments) -> Self {
        Self {
            value: m.mean,
            std_error: m.std_error(),
            replicates: m.count,
            method: EstimateMethod::MonteCarlo,
        }
    }

    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            f64::INFINITY
        } else {
            self.std_error / self.value.abs()
        }
    }
}

/// H_1 = 1, H_2 = 1/√π; no closed form otherwise.
pub fn pickands_closed(alpha: f64) -> Option<f64> {
    if alpha == 1.0 {
        Some(1.0)
    } else if alpha == 2.0 {
        Some(1.0 / std::f64::consts::PI.sqrt())
    } else {
        None
    }
}

/// P_1^a = 1 + 1/a, P_2^a = (1 + √(1 + 1/a))/2; no closed form otherwise.
pub fn piterbarg_closed(alpha: f64, a: f64) -> Option<f64> {
    if !(a > 0.0) {
        return None;
    }
    if alpha == 1.0 {
        Some(1.0 + 1.0 / a)
    } else if alpha == 2.0 {
        Some(0.5 * (1.0 + (1.0 + 1.0 / a).sqrt()))
    } else {
        None
    }
}

/// Monte Carlo settings shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub replicates: u64,
    /// Grid intervals over the (longest) interval.
    pub n_steps: usize,
    pub seed: u64,
    pub budget: u64,
}

impl McSettings {
    pub fn new(replicates: u64, seed: u64) -> Self {
        Self {
            replicates,
            n_steps: DEFAULT_STEPS,
            seed,
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure(self.replicates >= 1, "replicates", self.replicates as f64, "must be at least 1")?;
        ensure(self.n_steps >= 2, "n_steps", self.n_steps as f64, "must be at least 2")
    }

    fn check_budget(&self, points: usize) -> Result<()> {
        let requested = self.replicates.saturating_mul(points as u64);
        if requested > self.budget {
            return Err(Error::Budget {
                what: "replicates x grid points",
                requested,
                limit: self.budget,
            });
        }
        Ok(())
    }
}

/// A truncated constant: Pickands when `a` is `None`, Piterbarg otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSpec {
    pub alpha: f64,
    pub a: Option<f64>,
    pub lo: f64,
    pub hi: f64,
    pub mc: McSettings,
}

impl ConstantSpec {
    pub fn pickands(alpha: f64, t: f64, mc: McSettings) -> Self {
        Self {
            alpha,
            a: None,
            lo: 0.0,
            hi: t,
            mc,
        }
    }

    pub fn piterbarg(alpha: f64, a: f64, lo: f64, hi: f64, mc: McSettings) -> Self {
        Self {
            alpha,
            a: Some(a),
            lo,
            hi,
            mc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let Some(a) = self.a {
            ensure(a > 0.0 && a.is_finite(), "a", a, "must be positive")?;
        }
        ensure(self.lo.is_finite(), "lo", self.lo, "must be finite")?;
        ensure(self.hi.is_finite() && self.hi >= self.lo, "hi", self.hi, "must be finite and not below lo")?;
        self.mc.validate()
    }

    fn weight(&self) -> f64 {
        1.0 + self.a.unwrap_or(0.0)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    ensure(alpha > 0.0 && alpha <= 2.0, "alpha", alpha, "must lie in (0, 2]")
}

/// Exponent of the leading grid bias of a sup over a grid of step h.
fn bias_order(alpha: f64) -> f64 {
    if alpha == 2.0 {
        2.0
    } else {
        alpha / 2.0
    }
}

/// Richardson combination of fine (step h) and coarse (step 2h) values.
fn richardson(fine: f64, coarse: f64, order: f64) -> f64 {
    fine + (fine - coarse) / (2f64.powf(order) - 1.0)
}

enum Source {
    Fbm(FbmSampler),
    Linear,
}

/// Two-sided B_α observed at `t_j = lo + j·step`, `j = 0..=n`.
///
/// A one-sided fBm Z is drawn from `min(lo, 0)` and recentred,
/// `B(t) = Z(t − min(lo,0)) − Z(−min(lo,0))`, which has the law of B_α on
/// the whole line.
pub(crate) struct IntervalPath {
    times: Vec<f64>,
    offset: usize,
    zero: usize,
    source: Source,
}

pub(crate) struct IntervalScratch {
    z: Vec<f64>,
    fbm: Option<FbmScratch>,
    b: Vec<f64>,
}

impl IntervalPath {
    /// `n_steps` is the requested resolution; the actual count is adjusted
    /// so that 0 and `lo` are grid points, and made even.
    pub(crate) fn new(alpha: f64, lo: f64, hi: f64, n_steps: usize) -> Result<Self> {
        check_alpha(alpha)?;
        ensure(hi > lo, "hi", hi, "must exceed lo")?;
        let h0 = (hi - lo) / n_steps as f64;
        let (step, k) = if lo == 0.0 {
            (h0, 0)
        } else {
            let k = ((lo.abs() / h0).round() as usize).max(1);
            (lo.abs() / k as f64, k)
        };
        let mut n = (((hi - lo) / step).round() as usize).max(2);
        n += n % 2;
        let (offset, zero) = if lo >= 0.0 { (k, 0) } else { (0, k) };
        let total = (offset + n).max(zero);
        let times = (0..=n).map(|j| lo + j as f64 * step).collect();
        let source = if alpha == 2.0 {
            Source::Linear
        } else {
            Source::Fbm(FbmSampler::new(alpha / 2.0, Grid::new(total as f64 * step, total)?)?)
        };
        Ok(Self {
            times,
            offset,
            zero,
            source,
        })
    }

    pub(crate) fn times(&self) -> &[f64] {
        &self.times
    }

    pub(crate) fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Number of underlying samples drawn per path (for budgeting).
    pub(crate) fn points(&self) -> usize {
        match &self.source {
            Source::Fbm(s) => s.grid().len(),
            Source::Linear => self.times.len(),
        }
    }

    pub(crate) fn scratch(&self) -> IntervalScratch {
        match &self.source {
            Source::Fbm(s) => IntervalScratch {
                z: vec![0.0; s.grid().len()],
                fbm: Some(s.scratch()),
                b: vec![0.0; self.times.len()],
            },
            Source::Linear => IntervalScratch {
                z: Vec::new(),
                fbm: None,
                b: vec![0.0; self.times.len()],
            },
        }
    }

    pub(crate) fn sample<'a, R: Rng + ?Sized>(&self, rng: &mut R, scratch: &'a mut IntervalScratch) -> &'a [f64] {
        match &self.source {
            Source::Fbm(s) => {
                s.sample_into(rng, scratch.fbm.as_mut().expect("fbm scratch"), &mut scratch.z);
                let base = scratch.z[self.zero];
                for (b, z) in scratch.b.iter_mut().zip(&scratch.z[self.offset..]) {
                    *b = z - base;
                }
            }
            Source::Linear => {
                let z: f64 = rng.sample(StandardNormal);
                for (b, t) in scratch.b.iter_mut().zip(&self.times) {
                    *b = t * z;
                }
            }
        }
        &scratch.b
    }
}

/// Drift term `w·|t|^α` on the grid.
fn penalty(times: &[f64], alpha: f64, weight: f64) -> Vec<f64> {
    times.iter().map(|t| weight * t.abs().powf(alpha)).collect()
}

/// Capped `exp(x)`; the flag reports whether the cap was hit.
fn capped_exp(x: f64) -> (f64, bool) {
    if x > EXP_CAP {
        (EXP_CAP.exp(), true)
    } else {
        (x.exp(), false)
    }
}

/// Fine, coarse (every other point) and extrapolated values of a truncated
/// constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEstimate {
    pub alpha: f64,
    pub a: Option<f64>,
    /// Interval actually covered by the grid.
    pub lo: f64,
    pub hi: f64,
    pub grid_step: f64,
    pub fine: EstimateWithError,
    pub coarse: EstimateWithError,
    /// Richardson-corrected value; this is the reported estimate.
    pub extrapolated: EstimateWithError,
    pub cap_hits: u64,
}

impl TruncatedEstimate {
    pub fn record(&self) -> ConstantRecord {
        ConstantRecord {
            alpha: self.alpha,
            a: self.a,
            interval: [self.lo, self.hi],
            value: self.extrapolated.value,
            std_error: self.extrapolated.std_error,
            replicates: self.extrapolated.replicates,
            grid_step: self.grid_step,
        }
    }
}

#[derive(Clone, Default)]
struct TripleMoments {
    fine: Moments,
    coarse: Moments,
    extrapolated: Moments,
    cap_hits: u64,
}

impl TripleMoments {
    fn merge(&mut self, other: &Self) {
        self.fine.merge(&other.fine);
        self.coarse.merge(&other.coarse);
        self.extrapolated.merge(&other.extrapolated);
        self.cap_hits += other.cap_hits;
    }
}

/// H_α[0,T] by Monte Carlo.
pub fn pickands_truncated(spec: &ConstantSpec) -> Result<TruncatedEstimate> {
    spec.validate()?;
    ensure(spec.a.is_none(), "a", spec.a.unwrap_or(0.0), "Pickands constants take no weight")?;
    ensure(spec.lo == 0.0, "lo", spec.lo, "Pickands intervals start at 0")?;
    truncated(spec)
}

/// P_α^a[S,T] by Monte Carlo.
pub fn piterbarg_truncated(spec: &ConstantSpec) -> Result<TruncatedEstimate> {
    spec.validate()?;
    ensure(spec.a.is_some(), "a", f64::NAN, "Piterbarg constants need a weight")?;
    truncated(spec)
}

fn truncated(spec: &ConstantSpec) -> Result<TruncatedEstimate> {
    let weight = spec.weight();
    if spec.hi == spec.lo {
        // Single point: exp(√2 B(S) − w|S|^α) has mean exp(−(w − 1)|S|^α).
        let exact = EstimateWithError::closed((-(weight - 1.0) * spec.lo.abs().powf(spec.alpha)).exp());
        return Ok(TruncatedEstimate {
            alpha: spec.alpha,
            a: spec.a,
            lo: spec.lo,
            hi: spec.hi,
            grid_step: 0.0,
            fine: exact,
            coarse: exact,
            extrapolated: exact,
            cap_hits: 0,
        });
    }
    let path = IntervalPath::new(spec.alpha, spec.lo, spec.hi, spec.mc.n_steps)?;
    spec.mc.check_budget(path.points())?;
    let pen = penalty(path.times(), spec.alpha, weight);
    let order = bias_order(spec.alpha);
    let stream = SeedStream::new(spec.mc.seed);
    let sqrt2 = std::f64::consts::SQRT_2;

    let acc = map_reduce(
        spec.mc.replicates,
        || (TripleMoments::default(), path.scratch()),
        |(acc, scratch), r| {
            let b = path.sample(&mut stream.rng(r), scratch);
            let mut fine = f64::NEG_INFINITY;
            let mut coarse = f64::NEG_INFINITY;
            for (j, (bj, pj)) in b.iter().zip(&pen).enumerate() {
                let v = sqrt2 * bj - pj;
                fine = fine.max(v);
                if j % 2 == 0 {
                    coarse = coarse.max(v);
                }
            }
            let (f, hit) = capped_exp(fine);
            let (c, _) = capped_exp(coarse);
            acc.cap_hits += hit as u64;
            acc.fine.push(f);
            acc.coarse.push(c);
            acc.extrapolated.push(richardson(f, c, order));
        },
        |a, b| a.0.merge(&b.0),
    )
    .0;
    if acc.cap_hits > 0 {
        log::warn!("{} replicates hit the exp({EXP_CAP}) cap; refine the grid", acc.cap_hits);
    }
    let times = path.times();
    Ok(TruncatedEstimate {
        alpha: spec.alpha,
        a: spec.a,
        lo: times[0],
        hi: times[times.len() - 1],
        grid_step: path.step(),
        fine: EstimateWithError::from_moments(&acc.fine),
        coarse: EstimateWithError::from_moments(&acc.coarse),
        extrapolated: EstimateWithError::from_moments(&acc.extrapolated),
        cap_hits: acc.cap_hits,
    })
}

/// One rung of a T ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub t: f64,
    /// H_α[0,T] on the fine grid.
    pub fine: EstimateWithError,
    /// Richardson-corrected H_α[0,T].
    pub extrapolated: EstimateWithError,
}

/// Estimate of H_α from a T ladder, by fitting H_α[0,T]/T ≈ H_α + κ/T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub alpha: f64,
    pub ladder: Vec<LadderPoint>,
    pub grid_step: f64,
    /// Least-squares intercept over the whole ladder.
    pub intercept_all: EstimateWithError,
    /// Intercept through the two largest T.
    pub intercept_tail: EstimateWithError,
    /// |intercept_all − intercept_tail|.
    pub spread: f64,
    /// Standard error of that difference (it is itself a replicate mean).
    pub spread_noise: f64,
    /// `intercept_tail` with error √(SE² + bias²), where the fit bias is
    /// estimated by √(max(0, spread² − spread_noise²)).
    pub estimate: EstimateWithError,
    pub cap_hits: u64,
}

/// Ladder and Monte Carlo budget used when none is given. The variance of
/// exp(sup) grows quickly with T (fastest for smooth paths), so the ladders
/// stay short; each default runs in well under a minute on one core.
pub fn default_limit_settings(alpha: f64, seed: u64) -> (Vec<f64>, McSettings) {
    if alpha >= 1.5 {
        (vec![0.25, 0.5, 1.0], McSettings::new(200_000, seed).with_steps(2048))
    } else {
        (vec![2.0, 3.0, 4.0], McSettings::new(1_500_000, seed).with_steps(1024))
    }
}

/// Default Monte Carlo budget for a Piterbarg limit.
pub fn default_piterbarg_settings(seed: u64) -> McSettings {
    McSettings::new(200_000, seed).with_steps(2048)
}

/// Intercept weights of a least-squares line through `(x_k, y_k)`.
fn intercept_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    x.iter().map(|v| 1.0 / n - mean * (v - mean) / sxx).collect()
}

/// H_α from one path per replicate on [0, T_max] evaluated on every prefix
/// [0, T_k] (common random numbers), then extrapolated in 1/T.
pub fn pickands_limit_estimate(alpha: f64, ladder: &[f64], mc: &McSettings) -> Result<LimitEstimate> {
    check_alpha(alpha)?;
    mc.validate()?;
    if ladder.len() < 2 {
        return Err(Error::Config("a T ladder needs at least two entries".into()));
    }
    for w in ladder.windows(2) {
        ensure(w[1] > w[0], "ladder", w[1], "must be strictly increasing")?;
    }
    ensure(ladder[0] > 0.0, "ladder", ladder[0], "entries must be positive")?;
    let t_max = ladder[ladder.len() - 1];
    let path = IntervalPath::new(alpha, 0.0, t_max, mc.n_steps)?;
    mc.check_budget(path.points())?;
    let step = path.step();
    let ends: Vec<usize> = ladder
        .iter()
        .map(|t| {
            let i = ((t / step).round() as usize).max(2);
            i + i % 2
        })
        .collect();
    let ts: Vec<f64> = ends.iter().map(|&i| path.times()[i]).collect();
    let xs: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
    let w_all = intercept_weights(&xs);
    let w_tail = intercept_weights(&xs[xs.len() - 2..]);
    let pen = penalty(path.times(), alpha, 1.0);
    let order = bias_order(alpha);
    let stream = SeedStream::new(mc.seed);
    let sqrt2 = std::f64::consts::SQRT_2;
    let k = ladder.len();

    // Control variate: the occupation sum h·Σ exp(√2B(t_j) − t_j^α) has
    // known mean h·(points), because every summand has mean one.
    let known: Vec<f64> = ends.iter().zip(&ts).map(|(&e, t)| step * (e + 1) as f64 / t).collect();
    let known_all: f64 = w_all.iter().zip(&known).map(|(w, m)| w * m).sum();
    let known_tail: f64 = w_tail.iter().zip(&known[k - 2..]).map(|(w, m)| w * m).sum();

    #[derive(Clone)]
    struct Acc {
        fine: Vec<Moments>,
        extrapolated: Vec<Moments>,
        all: PairMoments,
        tail: PairMoments,
        diff: PairMoments,
        cap_hits: u64,
        rich: Vec<f64>,
        occupation: Vec<f64>,
    }
    let acc = map_reduce(
        mc.replicates,
        || {
            (
                Acc {
                    fine: vec![Moments::default(); k],
                    extrapolated: vec![Moments::default(); k],
                    all: PairMoments::default(),
                    tail: PairMoments::default(),
                    diff: PairMoments::default(),
                    cap_hits: 0,
                    rich: vec![0.0; k],
                    occupation: vec![0.0; k],
                },
                path.scratch(),
            )
        },
        |(acc, scratch), r| {
            let b = path.sample(&mut stream.rng(r), scratch);
            let mut fine = f64::NEG_INFINITY;
            let mut coarse = f64::NEG_INFINITY;
            let mut occupation = 0.0;
            let mut next = 0;
            for (j, (bj, pj)) in b.iter().zip(&pen).enumerate().take(ends[k - 1] + 1) {
                let v = sqrt2 * bj - pj;
                fine = fine.max(v);
                occupation += capped_exp(v).0;
                if j % 2 == 0 {
                    coarse = coarse.max(v);
                }
                if j == ends[next] {
                    let (f, hit) = capped_exp(fine);
                    let (c, _) = capped_exp(coarse);
                    acc.cap_hits += (hit && next == k - 1) as u64;
                    let rv = richardson(f, c, order);
                    acc.fine[next].push(f);
                    acc.extrapolated[next].push(rv);
                    acc.rich[next] = rv / ts[next];
                    acc.occupation[next] = step * occupation / ts[next];
                    next += 1;
                }
            }
            let dot = |w: &[f64], v: &[f64]| -> f64 { w.iter().zip(v).map(|(a, b)| a * b).sum() };
            let (all, all_x) = (dot(&w_all, &acc.rich), dot(&w_all, &acc.occupation));
            let (tail, tail_x) = (dot(&w_tail, &acc.rich[k - 2..]), dot(&w_tail, &acc.occupation[k - 2..]));
            acc.all.push(all, all_x);
            acc.tail.push(tail, tail_x);
            acc.diff.push(all - tail, all_x - tail_x);
        },
        |a, b| {
            let (a, b) = (&mut a.0, &b.0);
            for i in 0..k {
                a.fine[i].merge(&b.fine[i]);
                a.extrapolated[i].merge(&b.extrapolated[i]);
            }
            a.all.merge(&b.all);
            a.tail.merge(&b.tail);
            a.diff.merge(&b.diff);
            a.cap_hits += b.cap_hits;
        },
    )
    .0;

    let controlled = |m: &PairMoments, known: f64| {
        let (value, std_error) = m.controlled(known);
        EstimateWithError {
            value,
            std_error,
            replicates: m.count,
            method: EstimateMethod::MonteCarlo,
        }
    };
    let intercept_all = controlled(&acc.all, known_all);
    let intercept_tail = controlled(&acc.tail, known_tail);
    let (spread, spread_noise) = if k > 2 {
        let d = controlled(&acc.diff, known_all - known_tail);
        (d.value.abs(), d.std_error)
    } else {
        (0.0, 0.0)
    };
    let bias = (spread * spread - spread_noise * spread_noise).max(0.0).sqrt();
    let estimate = EstimateWithError {
        std_error: intercept_tail.std_error.hypot(bias),
        ..intercept_tail
    };
    Ok(LimitEstimate {
        alpha,
        ladder: (0..k)
            .map(|i| LadderPoint {
                t: ts[i],
                fine: EstimateWithError::from_moments(&acc.fine[i]),
                extrapolated: EstimateWithError::from_moments(&acc.extrapolated[i]),
            })
            .collect(),
        grid_step: step,
        intercept_all,
        intercept_tail,
        spread,
        spread_noise,
        estimate,
        cap_hits: acc.cap_hits,
    })
}

/// Default truncation for the Piterbarg limit: the weighted sup settles
/// quickly, so a moderate interval leaves a negligible tail.
pub fn default_piterbarg_horizon(alpha: f64, a: f64) -> f64 {
    // The penalty a·t^α must dominate: pick S with a·S^α ≈ 16.
    (16.0 / a).powf(1.0 / alpha).max(2.0)
}

/// P_α^a = lim P_α^a[0,S], estimated at a single large S.
pub fn piterbarg_limit_estimate(alpha: f64, a: f64, horizon: f64, mc: &McSettings) -> Result<TruncatedEstimate> {
    piterbarg_truncated(&ConstantSpec::piterbarg(alpha, a, 0.0, horizon, *mc))
}

/// H_α[0,T] from the exceedance probability of a stationary process with
/// correlation exp(−|t|^α) over [0, u^{−2/α}T], divided by Ψ(u).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceEstimate {
    pub u: f64,
    pub exceedances: u64,
    pub probability: EstimateWithError,
    pub estimate: EstimateWithError,
    /// Fewer than [`MIN_EXCEEDANCES`] hits.
    pub unstable: bool,
}

pub const MIN_EXCEEDANCES: u64 = 50;

pub fn pickands_via_exceedance(alpha: f64, t: f64, u_ladder: &[f64], mc: &McSettings) -> Result<Vec<ExceedanceEstimate>> {
    check_alpha(alpha)?;
    mc.validate()?;
    ensure(t > 0.0, "t", t, "must be positive")?;
    let n = mc.n_steps;
    mc.check_budget(n + 1)?;
    u_ladder
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            ensure(u > 0.0, "u", u, "must be positive")?;
            let len = u.powf(-2.0 / alpha) * t;
            let h = len / n as f64;
            let autocov: Vec<f64> = (0..=n + 1).map(|i| (-(i as f64 * h).powf(alpha)).exp()).collect();
            let sampler = StationarySampler::new(&autocov)?;
            let stream = SeedStream::new(mc.seed).domain(0xe8ce_0000 + k as u64);
            let m = map_reduce(
                mc.replicates,
                || (Moments::default(), sampler.scratch(), vec![0.0; n + 1]),
                |(m, scratch, buf), r| {
                    sampler.sample_into(&mut stream.rng(r), scratch, buf);
                    let hit = buf.iter().any(|&x| x > u);
                    m.push(hit as u64 as f64);
                },
                |a, b| a.0.merge(&b.0),
            )
            .0;
            let psi = normal::sf(u);
            let exceedances = (m.mean * m.count as f64).round() as u64;
            let unstable = exceedances < MIN_EXCEEDANCES;
            if unstable {
                log::warn!("only {exceedances} exceedances at u = {u}; estimate is unstable");
            }
            let probability = EstimateWithError::from_moments(&m);
            Ok(ExceedanceEstimate {
                u,
                exceedances,
                probability,
                estimate: EstimateWithError {
                    value: probability.value / psi,
                    std_error: probability.std_error / psi,
                    ..probability
                },
                unstable,
            })
        })
        .collect()
}

/// JSON export record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantRecord {
    pub alpha: f64,
    pub a: Option<f64>,
    pub interval: [f64; 2],
    pub value: f64,
    pub std_error: f64,
    pub replicates: u64,
    pub grid_step: f64,
}

pub fn write_records(path: &Path, records: &[ConstantRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_forms() {
        assert_eq!(pickands_closed(1.0), Some(1.0));
        assert_relative_eq!(pickands_closed(2.0).unwrap(), 0.564_189_583_547_756_3, epsilon = 1e-15);
        assert_eq!(pickands_closed(1.5), None);
        assert_eq!(piterbarg_closed(1.0, 1.0), Some(2.0));
        assert_relative_eq!(piterbarg_closed(2.0, 1.0).unwrap(), 1.207_106_781_186_547_5, epsilon = 1e-15);
        assert_relative_eq!(piterbarg_closed(2.0, 1e18).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(piterbarg_closed(1.3, 1.0), None);
        assert_eq!(piterbarg_closed(1.0, 0.0), None);
    }

    #[test]
    fn degenerate_intervals() {
        let mc = McSettings::new(10, 1);
        let e = pickands_truncated(&ConstantSpec::pickands(1.0, 0.0, mc)).unwrap();
        assert_eq!(e.extrapolated.value, 1.0);
        let e = piterbarg_truncated(&ConstantSpec::piterbarg(1.5, 2.0, 0.0, 0.0, mc)).unwrap();
        assert_eq!(e.extrapolated.value, 1.0);
    }

    #[test]
    fn small_t_tends_to_one() {
        let mc = McSettings::new(4000, 5).with_steps(256);
        let e = pickands_truncated(&ConstantSpec::pickands(1.0, 1e-4, mc)).unwrap();
        assert!(e.fine.value >= 1.0 && e.fine.value < 1.05, "{}", e.fine.value);
    }

    #[test]
    fn interval_path_grid_contains_zero_and_lo() {
        for (lo, hi) in [(0.0, 2.0), (0.7, 3.0), (-1.3, 2.0), (-3.0, -1.0)] {
            let p = IntervalPath::new(1.0, lo, hi, 100).unwrap();
            let t = p.times();
            assert_eq!(t[0], lo);
            assert!((t[t.len() - 1] - hi).abs() < 2.0 * p.step());
            assert_eq!((t.len() - 1) % 2, 0);
            // B(0) = 0 whenever 0 is in range.
            let mut scratch = p.scratch();
            let b = p.sample(&mut SeedStream::new(1).rng(0), &mut scratch).to_vec();
            if lo <= 0.0 && hi >= 0.0 {
                let i0 = t.iter().position(|x| x.abs() < 1e-12).unwrap();
                assert_eq!(b[i0], 0.0);
            }
        }
    }

    #[test]
    fn two_sided_path_has_fbm_variance() {
        let p = IntervalPath::new(1.4, -1.0, 1.0, 20).unwrap();
        let stream = SeedStream::new(2);
        let mut scratch = p.scratch();
        let (mut m0, mut m1) = (Moments::default(), Moments::default());
        for r in 0..40_000 {
            let b = p.sample(&mut stream.rng(r), &mut scratch);
            m0.push(b[0] * b[0]);
            m1.push(b[0] * b[20]);
        }
        // Var B(−1) = 1, Cov(B(−1), B(1)) = ½(1 + 1 − 2^1.4).
        assert!((m0.mean - 1.0).abs() < 4.0 * m0.std_error());
        let target = 0.5 * (2.0 - 2f64.powf(1.4));
        assert!((m1.mean - target).abs() < 4.0 * m1.std_error(), "{} vs {target}", m1.mean);
    }

    #[test]
    fn estimates_are_at_least_one_and_piterbarg_below_pickands() {
        for alpha in [0.8, 1.0, 2.0] {
            let mc = McSettings::new(2000, 9).with_steps(512);
            let h = pickands_truncated(&ConstantSpec::pickands(alpha, 2.0, mc)).unwrap();
            let p = piterbarg_truncated(&ConstantSpec::piterbarg(alpha, 0.5, 0.0, 2.0, mc)).unwrap();
            assert!(h.fine.value >= 1.0 && h.coarse.value >= 1.0);
            assert!(p.fine.value >= 1.0);
            // Same paths, heavier penalty.
            assert!(p.fine.value <= h.fine.value);
            assert!(h.coarse.value <= h.fine.value);
        }
    }

    #[test]
    fn ladder_is_pathwise_monotone() {
        let mc = McSettings::new(3000, 4).with_steps(600);
        let est = pickands_limit_estimate(1.0, &[1.0, 2.0, 3.0], &mc).unwrap();
        for w in est.ladder.windows(2) {
            assert!(w[1].fine.value >= w[0].fine.value);
        }
    }

    #[test]
    fn alpha_two_matches_exact_truncated_value() {
        // H_2[0,T] = 1 + T/√π up to a negligible tail.
        let mc = McSettings::new(200_000, 3).with_steps(1024);
        let e = pickands_truncated(&ConstantSpec::pickands(2.0, 1.0, mc)).unwrap();
        let exact = 1.0 + 1.0 / std::f64::consts::PI.sqrt();
        let x = e.extrapolated;
        assert!((x.value - exact).abs() < 4.0 * x.std_error, "{} ± {} vs {exact}", x.value, x.std_error);
    }

    #[test]
    fn intercept_weights_reproduce_lines() {
        let x = [1.0, 0.5, 1.0 / 3.0];
        let w = intercept_weights(&x);
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let b: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert_relative_eq!(b, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn records_round_trip() {
        let mc = McSettings::new(100, 1).with_steps(64);
        let e = pickands_truncated(&ConstantSpec::pickands(1.0, 1.0, mc)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        write_records(&path, &[e.record()]).unwrap();
        let back: Vec<ConstantRecord> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, vec![e.record()]);
    }

    #[test]
    fn budget_is_enforced() {
        let mut mc = McSettings::new(1_000_000, 1);
        mc.budget = 1000;
        assert!(matches!(
            pickands_truncated(&ConstantSpec::pickands(1.0, 1.0, mc)),
            Err(Error::Budget { .. })
        ));
    }
}
