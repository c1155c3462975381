//! Two-parameter Gaussian fields on rectangular grids: the field Y(s,t)
//! built from one fBm path, and the canonical field
//! ξ̃(s,t) = ξ(s,t)/((1 + b₁s^β)(1 + b₂|t−t₀|² + b₃|t−t₀|s)), where ξ is
//! stationary with correlation exp(−a₁|Δs|^β − a₂|Δt|^β).
//!
//! The correlation of ξ is separable, so its covariance on a grid is a
//! Kronecker product K_s ⊗ K_t and a sample is L_s Z L_tᵀ with Z iid
//! normal. Both factors are computed once per grid.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{delta_region, field_sup_asymptotic, ConstantPair, FieldSpec, Rect, Side};
use crate::constants::{check_alpha, pickands_truncated, piterbarg_truncated, ConstantSpec, EstimateWithError, McSettings};
use crate::error::{ensure, Error, Result};
use crate::fbm::fbm_cov_unchecked;
use crate::linalg::{cholesky_jittered, lower_mul};
use crate::mc::{map_reduce, Moments, SeedStream};
use crate::model::ModelParams;
use crate::normal;

/// Default cap on the number of grid points of a field.
pub const DEFAULT_POINT_BUDGET: usize = 4096;

/// Grid points per Pickands cell u^{−2/β} along each axis.
pub const DEFAULT_CELL_POINTS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    s_points: Vec<f64>,
    t_points: Vec<f64>,
}

fn check_axis(name: &'static str, pts: &[f64]) -> Result<()> {
    if pts.is_empty() {
        return Err(Error::Config(format!("{name} axis is empty")));
    }
    for w in pts.windows(2) {
        ensure(w[1] > w[0], name, w[1], "axis points must be strictly ascending")?;
    }
    ensure(pts.iter().all(|v| v.is_finite()), name, f64::NAN, "axis points must be finite")
}

impl FieldGrid {
    pub fn new(s_points: Vec<f64>, t_points: Vec<f64>) -> Result<Self> {
        Self::with_budget(s_points, t_points, DEFAULT_POINT_BUDGET)
    }

    pub fn with_budget(s_points: Vec<f64>, t_points: Vec<f64>, budget: usize) -> Result<Self> {
        check_axis("s", &s_points)?;
        check_axis("t", &t_points)?;
        let total = s_points.len() * t_points.len();
        if total > budget {
            return Err(Error::Budget {
                what: "field grid points",
                requested: total as u64,
                limit: budget as u64,
            });
        }
        Ok(Self { s_points, t_points })
    }

    /// `n_s + 1` by `n_t + 1` equally spaced points covering `rect`.
    pub fn uniform(rect: &Rect, n_s: usize, n_t: usize, budget: usize) -> Result<Self> {
        Self::with_budget(axis(rect.s_lo, rect.s_hi, n_s), axis(rect.t_lo, rect.t_hi, n_t), budget)
    }

    pub fn s_points(&self) -> &[f64] {
        &self.s_points
    }

    pub fn t_points(&self) -> &[f64] {
        &self.t_points
    }

    pub fn len(&self) -> usize {
        self.s_points.len() * self.t_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(s_i, t_j)` (row-major in s).
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.t_points.len() + j
    }
}

/// `n + 1` equally spaced points on [lo, hi] (a single point if lo = hi).
fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi == lo || n == 0 {
        return vec![lo];
    }
    let h = (hi - lo) / n as f64;
    (0..=n).map(|k| if k == n { hi } else { lo + k as f64 * h }).collect()
}

/// Even number of intervals with step at most `step` over a length.
fn even_intervals(len: f64, step: f64) -> usize {
    if len <= 0.0 {
        return 0;
    }
    let n = ((len / step).ceil() as usize).max(2);
    n + n % 2
}

/// Values on a [`FieldGrid`], row-major in s. Invalid entries are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub grid: FieldGrid,
    pub values: Vec<f64>,
}

impl FieldSample {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }
}

/// Largest value at grid points inside `region` (NaN entries skipped).
pub fn sup_over_region(sample: &FieldSample, region: &Rect) -> Result<f64> {
    let mask = RegionMask::new(&sample.grid, region, false)?;
    Ok(mask.sup(&sample.values))
}

/// Grid points of a rectangle, optionally thinned to every other point
/// along each axis (the step-doubled subgrid).
#[derive(Debug, Clone)]
struct RegionMask {
    rows: Vec<usize>,
    cols: Vec<usize>,
    n_t: usize,
}

impl RegionMask {
    fn new(grid: &FieldGrid, region: &Rect, coarse: bool) -> Result<Self> {
        let pick = |pts: &[f64], lo: f64, hi: f64| -> Vec<usize> {
            let inside: Vec<usize> = (0..pts.len()).filter(|&k| pts[k] >= lo && pts[k] <= hi).collect();
            if coarse {
                inside.iter().copied().enumerate().filter(|(n, _)| n % 2 == 0).map(|(_, k)| k).collect()
            } else {
                inside
            }
        };
        let rows = pick(grid.s_points(), region.s_lo, region.s_hi);
        let cols = pick(grid.t_points(), region.t_lo, region.t_hi);
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::EmptyRegion(format!(
                "no grid point in [{}, {}] x [{}, {}]",
                region.s_lo, region.s_hi, region.t_lo, region.t_hi
            )));
        }
        Ok(Self {
            rows,
            cols,
            n_t: grid.t_points().len(),
        })
    }

    fn sup(&self, values: &[f64]) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for &i in &self.rows {
            let row = &values[i * self.n_t..(i + 1) * self.n_t];
            for &j in &self.cols {
                if row[j] > m {
                    m = row[j];
                }
            }
        }
        m
    }
}

/// A field that can be sampled repeatedly on a fixed grid.
pub trait FieldSampler: Sync {
    type Scratch;
    fn grid(&self) -> &FieldGrid;
    fn scratch(&self) -> Self::Scratch;
    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Self::Scratch, out: &mut [f64]);

    fn sample(&self, seed: u64) -> FieldSample {
        let mut scratch = self.scratch();
        let mut values = vec![0.0; self.grid().len()];
        self.sample_into(&mut SeedStream::new(seed).rng(0), &mut scratch, &mut values);
        FieldSample {
            grid: self.grid().clone(),
            values,
        }
    }
}

/// Y(s,t) = (X_H(t) − γX_H(s))/(1 + c(t − γs)) from one fBm path sampled
/// exactly at the union of the axis points.
pub struct YFieldSampler {
    params: ModelParams,
    grid: FieldGrid,
    lower: DMatrix<f64>,
    /// Index into the union of positive times, or `None` for time 0.
    s_index: Vec<Option<usize>>,
    t_index: Vec<Option<usize>>,
}

pub struct YScratch {
    z: Vec<f64>,
    x: Vec<f64>,
}

impl YFieldSampler {
    pub fn new(params: &ModelParams, grid: FieldGrid) -> Result<Self> {
        params.validate()?;
        ensure(grid.s_points()[0] >= 0.0, "s", grid.s_points()[0], "field times must be nonnegative")?;
        ensure(grid.t_points()[0] >= 0.0, "t", grid.t_points()[0], "field times must be nonnegative")?;
        let mut union: Vec<f64> = grid
            .s_points()
            .iter()
            .chain(grid.t_points())
            .copied()
            .filter(|&v| v > 0.0)
            .collect();
        union.sort_by(f64::total_cmp);
        union.dedup();
        let h = params.hurst;
        let cov = DMatrix::from_fn(union.len(), union.len(), |i, j| fbm_cov_unchecked(union[i], union[j], h));
        let lower = if union.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            cholesky_jittered(&cov)?.0
        };
        let locate = |v: f64| {
            if v == 0.0 {
                None
            } else {
                union.binary_search_by(|p| p.total_cmp(&v)).ok()
            }
        };
        let s_index = grid.s_points().iter().map(|&v| locate(v)).collect();
        let t_index = grid.t_points().iter().map(|&v| locate(v)).collect();
        Ok(Self {
            params: *params,
            grid,
            lower,
            s_index,
            t_index,
        })
    }
}

impl FieldSampler for YFieldSampler {
    type Scratch = YScratch;

    fn grid(&self) -> &FieldGrid {
        &self.grid
    }

    fn scratch(&self) -> YScratch {
        YScratch {
            z: vec![0.0; self.lower.nrows()],
            x: vec![0.0; self.lower.nrows()],
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut YScratch, out: &mut [f64]) {
        for z in scratch.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        lower_mul(&self.lower, &scratch.z, &mut scratch.x);
        let at = |k: Option<usize>| k.map_or(0.0, |k| scratch.x[k]);
        let (g, c) = (self.params.gamma, self.params.drift);
        let n_t = self.grid.t_points().len();
        for (i, (&s, &si)) in self.grid.s_points().iter().zip(&self.s_index).enumerate() {
            let xs = at(si);
            for (j, (&t, &ti)) in self.grid.t_points().iter().zip(&self.t_index).enumerate() {
                out[i * n_t + j] = if s <= t {
                    (at(ti) - g * xs) / (1.0 + c * (t - g * s))
                } else {
                    f64::NAN
                };
            }
        }
    }
}

/// One Y field, reproducible from `seed`.
pub fn sample_y_field(params: &ModelParams, grid: FieldGrid, seed: u64) -> Result<FieldSample> {
    Ok(YFieldSampler::new(params, grid)?.sample(seed))
}

/// Stationary ξ with separable correlation, divided by a deterministic
/// weight.
pub struct SeparableFieldSampler {
    grid: FieldGrid,
    ls: DMatrix<f64>,
    lt: DMatrix<f64>,
    /// Pointwise weight; ξ̃ = ξ / weight.
    weight: Vec<f64>,
    jitter: f64,
}

pub struct SeparableScratch {
    z: Vec<f64>,
    tmp: Vec<f64>,
}

fn kernel_factor(pts: &[f64], a: f64, beta: f64) -> Result<(DMatrix<f64>, f64)> {
    let k = DMatrix::from_fn(pts.len(), pts.len(), |i, j| (-a * (pts[i] - pts[j]).abs().powf(beta)).exp());
    cholesky_jittered(&k)
}

impl SeparableFieldSampler {
    /// General separable field: correlation exp(−a₁|Δs|^{β_s} − a₂|Δt|^{β_t})
    /// and the given weight function.
    pub fn new(grid: FieldGrid, corr: [(f64, f64); 2], weight: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (ls, js) = kernel_factor(grid.s_points(), corr[0].0, corr[0].1)?;
        let (lt, jt) = kernel_factor(grid.t_points(), corr[1].0, corr[1].1)?;
        let mut w = Vec::with_capacity(grid.len());
        for &s in grid.s_points() {
            for &t in grid.t_points() {
                w.push(weight(s, t));
            }
        }
        let jitter = js.max(jt);
        if jitter > 0.0 {
            log::info!("field covariance factored with jitter {jitter:e}");
        }
        Ok(Self {
            grid,
            ls,
            lt,
            weight: w,
            jitter,
        })
    }

    /// The canonical field of a [`FieldSpec`].
    pub fn canonical(spec: &FieldSpec, grid: FieldGrid) -> Result<Self> {
        spec.validate()?;
        let spec = *spec;
        Self::new(grid, [(spec.a1, spec.beta), (spec.a2, spec.beta)], move |s, t| spec.weight(s, t))
    }

    /// Largest diagonal jitter added to either factor (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Draws the unweighted stationary field ξ.
    pub fn sample_xi_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut SeparableScratch, out: &mut [f64]) {
        let (ns, nt) = (self.ls.nrows(), self.lt.nrows());
        for z in scratch.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        // tmp = Z L_tᵀ : tmp[i][j] = Σ_{b≤j} Z[i][b] L_t[j][b]
        for i in 0..ns {
            let zi = &scratch.z[i * nt..(i + 1) * nt];
            for j in 0..nt {
                let mut acc = 0.0;
                for (b, zb) in zi[..=j].iter().enumerate() {
                    acc += self.lt[(j, b)] * zb;
                }
                scratch.tmp[i * nt + j] = acc;
            }
        }
        // out = L_s tmp
        for i in 0..ns {
            let row = &mut out[i * nt..(i + 1) * nt];
            row.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..=i {
                let l = self.ls[(i, a)];
                let src = &scratch.tmp[a * nt..(a + 1) * nt];
                for (o, v) in row.iter_mut().zip(src) {
                    *o += l * v;
                }
            }
        }
    }
}

impl FieldSampler for SeparableFieldSampler {
    type Scratch = SeparableScratch;

    fn grid(&self) -> &FieldGrid {
        &self.grid
    }

    fn scratch(&self) -> SeparableScratch {
        SeparableScratch {
            z: vec![0.0; self.grid.len()],
            tmp: vec![0.0; self.grid.len()],
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut SeparableScratch, out: &mut [f64]) {
        self.sample_xi_into(rng, scratch, out);
        for (v, w) in out.iter_mut().zip(&self.weight) {
            *v /= w;
        }
    }
}

/// One canonical field ξ̃, reproducible from `seed`.
pub fn sample_canonical_field(spec: &FieldSpec, grid: FieldGrid, seed: u64) -> Result<FieldSample> {
    Ok(SeparableFieldSampler::canonical(spec, grid)?.sample(seed))
}

/// Exceedance frequency of `sup > level` over one region, on the full grid
/// and on its step-doubled subgrid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionExceedance {
    pub fine: EstimateWithError,
    pub coarse: EstimateWithError,
}

/// Estimates P(sup over each region > level) from the same samples, so
/// nested regions give pathwise-ordered frequencies.
pub fn region_exceedances<S: FieldSampler>(
    sampler: &S,
    regions: &[Rect],
    level: f64,
    replicates: u64,
    stream: SeedStream,
) -> Result<Vec<RegionExceedance>>
where
    S::Scratch: Send,
{
    let grid = sampler.grid();
    let masks = regions
        .iter()
        .map(|r| Ok((RegionMask::new(grid, r, false)?, RegionMask::new(grid, r, true)?)))
        .collect::<Result<Vec<_>>>()?;
    let k = regions.len();
    let acc = map_reduce(
        replicates,
        || (vec![(Moments::default(), Moments::default()); k], sampler.scratch(), vec![0.0; grid.len()]),
        |(acc, scratch, buf), r| {
            sampler.sample_into(&mut stream.rng(r), scratch, buf);
            for ((fine, coarse), (mf, mc)) in acc.iter_mut().zip(&masks) {
                fine.push((mf.sup(buf) > level) as u8 as f64);
                coarse.push((mc.sup(buf) > level) as u8 as f64);
            }
        },
        |a, b| {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                x.0.merge(&y.0);
                x.1.merge(&y.1);
            }
        },
    )
    .0;
    Ok(acc
        .iter()
        .map(|(f, c)| RegionExceedance {
            fine: EstimateWithError::from_moments(f),
            coarse: EstimateWithError::from_moments(c),
        })
        .collect())
}

/// Monte Carlo settings for field experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMc {
    pub replicates: u64,
    pub seed: u64,
    /// Maximum number of grid points.
    pub budget: usize,
    /// Grid points per Pickands cell along each axis.
    pub cell_points: f64,
}

impl FieldMc {
    pub fn new(replicates: u64, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            budget: DEFAULT_POINT_BUDGET,
            cell_points: DEFAULT_CELL_POINTS,
        }
    }
}

/// One row of a verification ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub u: f64,
    pub empirical_p: f64,
    pub std_error: f64,
    pub predicted_p: f64,
    /// Standard error of the prediction (from estimated constants).
    pub predicted_se: f64,
    pub ratio: f64,
    /// Standard error of the ratio, both sources combined.
    pub ratio_se: f64,
    /// Empirical probability on the step-doubled subgrid.
    pub coarse_p: f64,
    pub grid_step_s: f64,
    pub grid_step_t: f64,
    pub grid_points: usize,
    /// Prediction below 10/replicates: the estimate is noise-dominated.
    pub infeasible: bool,
}

fn ratio_row(
    u: f64,
    emp: &RegionExceedance,
    predicted: f64,
    predicted_se: f64,
    steps: (f64, f64),
    grid_points: usize,
    replicates: u64,
) -> VerifyRow {
    let ratio = emp.fine.value / predicted;
    let rel = (emp.fine.std_error / emp.fine.value.max(f64::MIN_POSITIVE)).hypot(predicted_se / predicted);
    let infeasible = predicted < 10.0 / replicates as f64;
    if infeasible {
        log::warn!("u = {u}: predicted probability {predicted:.3e} < 10/{replicates}; ratio is unreliable");
    }
    VerifyRow {
        u,
        empirical_p: emp.fine.value,
        std_error: emp.fine.std_error,
        predicted_p: predicted,
        predicted_se,
        ratio,
        ratio_se: ratio * rel,
        coarse_p: emp.coarse.value,
        grid_step_s: steps.0,
        grid_step_t: steps.1,
        grid_points,
        infeasible,
    }
}

/// Axis with step at most `step`, thinned if the point budget is exceeded.
fn region_axes(rect: &Rect, step: f64, budget: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut step = step;
    loop {
        let ns = even_intervals(rect.s_hi - rect.s_lo, step);
        let nt = even_intervals(rect.t_hi - rect.t_lo, step);
        if (ns + 1) * (nt + 1) <= budget {
            return Ok((axis(rect.s_lo, rect.s_hi, ns), axis(rect.t_lo, rect.t_hi, nt), step));
        }
        if ns <= 2 && nt <= 2 {
            return Err(Error::Budget {
                what: "field grid points",
                requested: ((ns + 1) * (nt + 1)) as u64,
                limit: budget as u64,
            });
        }
        step *= 1.25;
        log::warn!("field grid exceeds the point budget; coarsening step to {step:e}");
    }
}

/// Right edge offset x of Δ¹ₓ(u), in units of 1/u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionOffset {
    Fixed(f64),
    /// x(u) = ln u, the largest offset that keeps Δ¹ₓ(u) inside
    /// [t₀−δ₂, t₀+δ₂]; it grows slower than any power of u.
    LogLevel,
}

impl RegionOffset {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            RegionOffset::Fixed(x) => x,
            RegionOffset::LogLevel => u.ln(),
        }
    }
}

/// Empirical vs leading-order P(sup over Δ¹ₓ(u) of ξ̃ > u) for each u. With
/// `limit_first` the prediction drops the Φ(√(2b₂)x) factor (large-x mode).
pub fn verify_thm21(
    spec: &FieldSpec,
    offset: RegionOffset,
    u_ladder: &[f64],
    limit_first: bool,
    supplied: Option<&ConstantPair>,
    mc: &FieldMc,
) -> Result<Vec<VerifyRow>> {
    spec.validate()?;
    u_ladder
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let x = offset.eval(u);
            let region = delta_region(u, x, spec, Side::First)?;
            let step = u.powf(-2.0 / spec.beta) / mc.cell_points;
            let (s, t, step) = region_axes(&region, step, mc.budget)?;
            let grid = FieldGrid::with_budget(s, t, mc.budget)?;
            let points = grid.len();
            let steps = (grid.s_points().get(1).map_or(0.0, |v| v - grid.s_points()[0]), step);
            let sampler = SeparableFieldSampler::canonical(spec, grid)?;
            let stream = SeedStream::new(mc.seed).domain(k as u64);
            let emp = region_exceedances(&sampler, &[region], u, mc.replicates, stream)?;
            let predicted = field_sup_asymptotic(u, x, spec, Side::First, limit_first, supplied)?;
            let c = crate::asymptotics::field_constants(spec, supplied)?;
            let rel = c.pickands.relative_error().hypot(c.piterbarg.relative_error());
            Ok(ratio_row(u, &emp[0], predicted, predicted * rel, steps, points, mc.replicates))
        })
        .collect()
}

/// Exceedance frequencies over Δ¹ₓ(u), Δ²ₓ(u) and their union, from the
/// same fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideComparison {
    pub u: f64,
    pub x: f64,
    pub first: EstimateWithError,
    pub second: EstimateWithError,
    pub union: EstimateWithError,
}

pub fn compare_sides(spec: &FieldSpec, x: f64, u: f64, mc: &FieldMc) -> Result<SideComparison> {
    let first = delta_region(u, x, spec, Side::First)?;
    let second = delta_region(u, x, spec, Side::Second)?;
    let union = Rect::new(first.s_lo, first.s_hi, first.t_lo, second.t_hi)?;
    let step = u.powf(-2.0 / spec.beta) / mc.cell_points;
    let (s, t1, _) = region_axes(&first, step, mc.budget / 2)?;
    let (_, t2, _) = region_axes(&second, step, mc.budget / 2)?;
    let t: Vec<f64> = t1.into_iter().chain(t2.into_iter().skip(1)).collect();
    let sampler = SeparableFieldSampler::canonical(spec, FieldGrid::with_budget(s, t, mc.budget)?)?;
    let est = region_exceedances(&sampler, &[first, second, union], u, mc.replicates, SeedStream::new(mc.seed))?;
    Ok(SideComparison {
        u,
        x,
        first: est[0].fine,
        second: est[1].fine,
        union: est[2].fine,
    })
}

/// Threshold g(u) in the two-dimensional Piterbarg lemma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Threshold {
    /// g(u) = u
    Level,
    /// g(u) = u + 1/u
    Shifted,
}

impl Threshold {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Threshold::Level => u,
            Threshold::Shifted => u + 1.0 / u,
        }
    }
}

/// Configuration of the two-dimensional Piterbarg lemma check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiterbargLemma {
    pub alpha1: f64,
    pub alpha2: f64,
    pub b1: f64,
    pub b2: f64,
    /// s-extent S of the scaled region [0,S].
    pub s_len: f64,
    pub t1: f64,
    pub t2: f64,
    /// Grid intervals along s on [0,S] and along t on [T₁,T₂].
    pub n_s: usize,
    pub n_t: usize,
    pub threshold: Threshold,
}

impl PiterbargLemma {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha1)?;
        check_alpha(self.alpha2)?;
        ensure(self.b1 >= 0.0 && self.b1.is_finite(), "b1", self.b1, "must be nonnegative")?;
        ensure(self.b2 > 0.0 && self.b2.is_finite(), "b2", self.b2, "must be positive")?;
        ensure(self.s_len > 0.0, "s_len", self.s_len, "must be positive")?;
        ensure(self.t2 > self.t1, "t2", self.t2, "must exceed t1")?;
        ensure(self.n_s >= 2 && self.n_s.is_multiple_of(2), "n_s", self.n_s as f64, "must be even and at least 2")?;
        ensure(self.n_t >= 2 && self.n_t.is_multiple_of(2), "n_t", self.n_t as f64, "must be even and at least 2")
    }

    /// b₁ = 0 turns the s-factor into a Pickands constant.
    pub fn uses_pickands_s_factor(&self) -> bool {
        self.b1 == 0.0
    }
}

/// Right-hand constants of the lemma on the same (scaled) grids as the
/// field: P^{b₁}_{α₁}[0,S] (or H_{α₁}[0,S] if b₁ = 0) and P^{b₂}_{α₂}[T₁,T₂].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    pub s_factor: EstimateWithError,
    pub t_factor: EstimateWithError,
    pub pickands_substituted: bool,
}

pub fn lemma_constants(cfg: &PiterbargLemma, replicates: u64, seed: u64) -> Result<LemmaConstants> {
    cfg.validate()?;
    let mc_s = McSettings::new(replicates, seed).with_steps(cfg.n_s);
    let s_factor = if cfg.uses_pickands_s_factor() {
        pickands_truncated(&ConstantSpec::pickands(cfg.alpha1, cfg.s_len, mc_s))?
    } else {
        piterbarg_truncated(&ConstantSpec::piterbarg(cfg.alpha1, cfg.b1, 0.0, cfg.s_len, mc_s))?
    };
    let mc_t = McSettings::new(replicates, seed ^ 0x7f4a_7c15).with_steps(cfg.n_t);
    let t_factor = piterbarg_truncated(&ConstantSpec::piterbarg(cfg.alpha2, cfg.b2, cfg.t1, cfg.t2, mc_t))?;
    // The field is observed on the raw grid, so compare against raw-grid
    // constants rather than extrapolated ones.
    Ok(LemmaConstants {
        s_factor: s_factor.fine,
        t_factor: t_factor.fine,
        pickands_substituted: cfg.uses_pickands_s_factor(),
    })
}

/// Field side of the lemma: P(sup ξ(s,t)/((1+b₁s^{α₁})(1+b₂|t|^{α₂})) > g(u))
/// over [0,u^{−2/α₁}S] × [u^{−2/α₂}T₁, u^{−2/α₂}T₂], against
/// constants × Ψ(g(u)).
pub fn verify_piterbarg_lemma(
    cfg: &PiterbargLemma,
    u_ladder: &[f64],
    constants: &LemmaConstants,
    mc: &FieldMc,
) -> Result<Vec<VerifyRow>> {
    cfg.validate()?;
    let c = *cfg;
    u_ladder
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            ensure(u > 0.0, "u", u, "must be positive")?;
            let ks = u.powf(-2.0 / c.alpha1);
            let kt = u.powf(-2.0 / c.alpha2);
            let region = Rect::new(0.0, ks * c.s_len, kt * c.t1, kt * c.t2)?;
            let grid = FieldGrid::with_budget(
                axis(region.s_lo, region.s_hi, c.n_s),
                axis(region.t_lo, region.t_hi, c.n_t),
                mc.budget,
            )?;
            let points = grid.len();
            let sampler = SeparableFieldSampler::new(grid, [(1.0, c.alpha1), (1.0, c.alpha2)], move |s, t| {
                (1.0 + c.b1 * s.abs().powf(c.alpha1)) * (1.0 + c.b2 * t.abs().powf(c.alpha2))
            })?;
            let level = c.threshold.eval(u);
            let stream = SeedStream::new(mc.seed).domain(k as u64);
            let emp = region_exceedances(&sampler, &[region], level, mc.replicates, stream)?;
            let product = constants.s_factor.value * constants.t_factor.value;
            let rel = constants.s_factor.relative_error().hypot(constants.t_factor.relative_error());
            let predicted = product * normal::sf(level);
            let steps = (ks * c.s_len / c.n_s as f64, kt * (c.t2 - c.t1) / c.n_t as f64);
            Ok(ratio_row(u, &emp[0], predicted, predicted * rel, steps, points, mc.replicates))
        })
        .collect()
}

/// Writes rows as pretty JSON.
pub fn write_rows(path: &std::path::Path, rows: &[VerifyRow]) -> Result<()> {
    let text = serde_json::to_string_pretty(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::var_y;

    #[test]
    fn grid_validation() {
        assert!(FieldGrid::new(vec![0.0, 1.0], vec![0.5]).is_ok());
        assert!(FieldGrid::new(vec![], vec![0.5]).is_err());
        assert!(FieldGrid::new(vec![1.0, 1.0], vec![0.5]).is_err());
        assert!(matches!(
            FieldGrid::new((0..100).map(f64::from).collect(), (0..100).map(f64::from).collect()),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn sup_over_regions() {
        let grid = FieldGrid::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0]).unwrap();
        let sample = FieldSample {
            grid,
            values: vec![1.0, 5.0, 2.0, f64::NAN, -1.0, 3.0],
        };
        let point = Rect::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(sup_over_region(&sample, &point).unwrap(), 2.0);
        let all = Rect::new(0.0, 2.0, 0.0, 1.0).unwrap();
        assert_eq!(sup_over_region(&sample, &all).unwrap(), 5.0);
        let inner = Rect::new(1.0, 2.0, 0.0, 1.0).unwrap();
        assert!(sup_over_region(&sample, &inner).unwrap() <= sup_over_region(&sample, &all).unwrap());
        let empty = Rect::new(0.2, 0.8, 0.0, 1.0).unwrap();
        assert!(matches!(sup_over_region(&sample, &empty), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn y_field_structure() {
        let params = ModelParams::new(0.7, 0.0, 1.0).unwrap();
        let grid = FieldGrid::new(vec![0.0, 0.5, 1.0], vec![1.0, 2.0]).unwrap();
        let f = sample_y_field(&params, grid.clone(), 3).unwrap();
        // γ = 0: rows agree.
        for j in 0..2 {
            assert_eq!(f.get(0, j), f.get(1, j));
            assert_eq!(f.get(0, j), f.get(2, j));
        }
        let grid = FieldGrid::new(vec![0.0, 1.5], vec![1.0]).unwrap();
        let f = sample_y_field(&ModelParams::new(0.7, 0.5, 1.0).unwrap(), grid, 3).unwrap();
        assert!(f.get(1, 0).is_nan());
        assert!(f.get(0, 0).is_finite());
    }

    #[test]
    fn y_field_variance_matches_formula() {
        let params = ModelParams::new(0.6, 0.5, 1.0).unwrap();
        let grid = FieldGrid::new(vec![0.0, 0.4, 1.0], vec![1.0, 1.6]).unwrap();
        let sampler = YFieldSampler::new(&params, grid.clone()).unwrap();
        let stream = SeedStream::new(8);
        let mut scratch = sampler.scratch();
        let mut buf = vec![0.0; grid.len()];
        let mut m = vec![Moments::default(); grid.len()];
        for r in 0..40_000 {
            sampler.sample_into(&mut stream.rng(r), &mut scratch, &mut buf);
            for (mk, v) in m.iter_mut().zip(&buf) {
                mk.push(v * v);
            }
        }
        for (i, &s) in grid.s_points().iter().enumerate() {
            for (j, &t) in grid.t_points().iter().enumerate() {
                let target = var_y(s, t, &params).unwrap().powi(2);
                let mk = &m[grid.index(i, j)];
                assert!((mk.mean - target).abs() < 4.0 * mk.std_error(), "({s},{t}): {} vs {target}", mk.mean);
            }
        }
    }

    #[test]
    fn canonical_field_is_xi_over_weight() {
        let spec = FieldSpec::new(1.5, 1.0, 2.0, 0.5, 1.0, 1.0, 1.0).unwrap();
        let grid = FieldGrid::new(vec![0.0, 0.1, 0.2], vec![0.8, 0.9, 1.0, 1.1]).unwrap();
        let sampler = SeparableFieldSampler::canonical(&spec, grid.clone()).unwrap();
        let tilde = sampler.sample(5);
        let mut scratch = sampler.scratch();
        let mut xi = vec![0.0; grid.len()];
        sampler.sample_xi_into(&mut SeedStream::new(5).rng(0), &mut scratch, &mut xi);
        for (i, &s) in grid.s_points().iter().enumerate() {
            for (j, &t) in grid.t_points().iter().enumerate() {
                assert_eq!(tilde.get(i, j), xi[grid.index(i, j)] / spec.weight(s, t));
            }
        }
    }

    #[test]
    fn separable_covariance_is_exact() {
        let spec = FieldSpec::new(1.5, 1.0, 1.0, 0.0, 0.7, 1.3, 0.0).unwrap();
        let grid = FieldGrid::new(vec![0.0, 0.3, 0.9], vec![-0.5, 0.0, 0.4]).unwrap();
        let sampler = SeparableFieldSampler::canonical(&spec, grid.clone()).unwrap();
        let n = grid.len();
        let reps = 60_000;
        let stream = SeedStream::new(4);
        let mut scratch = sampler.scratch();
        let mut xi = vec![0.0; n];
        let mut acc = vec![Moments::default(); n * n];
        for r in 0..reps {
            sampler.sample_xi_into(&mut stream.rng(r), &mut scratch, &mut xi);
            for p in 0..n {
                for q in 0..n {
                    acc[p * n + q].push(xi[p] * xi[q]);
                }
            }
        }
        let nt = grid.t_points().len();
        for p in 0..n {
            for q in 0..n {
                let (s1, t1) = (grid.s_points()[p / nt], grid.t_points()[p % nt]);
                let (s2, t2) = (grid.s_points()[q / nt], grid.t_points()[q % nt]);
                let target = spec.correlation(s1, s2, t1, t2);
                let m = &acc[p * n + q];
                assert!((m.mean - target).abs() < 4.0 * m.std_error(), "{p},{q}: {} vs {target}", m.mean);
            }
        }
    }

    #[test]
    fn nested_regions_give_ordered_frequencies() {
        let spec = FieldSpec::new(2.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        let u = 2.0;
        let big = Rect::new(0.0, 0.4, -0.4, 0.4).unwrap();
        let grid = FieldGrid::uniform(&big, 8, 16, 4096).unwrap();
        let sampler = SeparableFieldSampler::canonical(&spec, grid).unwrap();
        let regions: Vec<Rect> = [-0.2, 0.0, 0.2, 0.4]
            .iter()
            .map(|&x| Rect::new(0.0, 0.4, -0.4, x).unwrap())
            .collect();
        let est = region_exceedances(&sampler, &regions, u, 5000, SeedStream::new(1)).unwrap();
        for w in est.windows(2) {
            assert!(w[1].fine.value >= w[0].fine.value);
        }
        for e in &est {
            assert!(e.coarse.value <= e.fine.value);
        }
    }

    #[test]
    fn union_dominates_each_side() {
        let spec = FieldSpec::new(1.5, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let c = compare_sides(&spec, 0.3, 2.0, &FieldMc::new(4000, 2)).unwrap();
        assert!(c.union.value >= c.first.value && c.union.value >= c.second.value);
        assert!(c.union.value <= c.first.value + c.second.value);
        assert!(c.first.value > 0.0 && c.second.value > 0.0);
    }

    #[test]
    fn lemma_config_checks() {
        let mut cfg = PiterbargLemma {
            alpha1: 1.0,
            alpha2: 1.0,
            b1: 0.0,
            b2: 1.0,
            s_len: 2.0,
            t1: 0.0,
            t2: 2.0,
            n_s: 8,
            n_t: 8,
            threshold: Threshold::Level,
        };
        assert!(cfg.validate().is_ok() && cfg.uses_pickands_s_factor());
        let c = lemma_constants(&cfg, 2000, 1).unwrap();
        assert!(c.pickands_substituted && c.s_factor.value >= 1.0);
        cfg.b2 = 0.0;
        assert!(cfg.validate().is_err());
        cfg.b2 = 1.0;
        cfg.n_s = 7;
        assert!(cfg.validate().is_err());
        assert_eq!(Threshold::Shifted.eval(2.0), 2.5);
    }
}
