//! Monte Carlo campaigns for the reflected process: passage times
//! conditioned on ruin, ruin frequencies, and the report files.
//!
//! Conditioning on ruin is done by rejection: every replicate simulates a
//! full path on [0, K·t̃₀·u] and only ruined paths are kept. Standardization
//! uses the closed forms t̃₀ and A(u), never sample moments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::{a_scale, ruin_prob_approx, ruin_prob_leading, t_tilde0, ConstantPair};
use crate::error::{ensure, Error, Result};
use crate::fbm::{apply_drift, FbmSampler, Grid};
use crate::mc::{map_reduce, Moments, SeedStream};
use crate::model::ModelParams;
use crate::normal;
use crate::reflected::{scan_levels, LevelHit, PassageRecord};

/// Largest allowed grid step relative to A(u).
pub const MAX_STEP_OVER_A: f64 = 0.02;

/// Exceedances after this fraction of the horizon count as horizon
/// violations.
pub const LATE_FRACTION: f64 = 0.9;

/// More than this fraction of late exceedances invalidates a level.
pub const MAX_VIOLATION_RATE: f64 = 0.01;

/// 95% quantile of the Kolmogorov distribution: P(√n·KS > 1.358) ≈ 0.05.
pub const KS_95: f64 = 1.358;

const LIMITATION: &str = "The limit theorem gives no convergence rate; agreement is judged by trends across levels, not by tolerances at a fixed level.";

fn default_horizon() -> f64 {
    3.0
}

fn default_steps() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    /// Levels u, strictly ascending.
    pub levels: Vec<f64>,
    /// Horizon in units of t̃₀·u.
    #[serde(default = "default_horizon")]
    pub horizon_factor: f64,
    /// Grid steps per t̃₀·u.
    #[serde(default = "default_steps")]
    pub steps_per_unit: usize,
    pub replicates: u64,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Estimates of H_{2H} and P_{2H}^{(1−γ)/γ}, needed when H ≠ ½.
    #[serde(default)]
    pub constants: Option<ConstantPair>,
}

impl ExperimentConfig {
    pub fn new(model: ModelParams, levels: Vec<f64>, replicates: u64, seed: u64) -> Self {
        Self {
            model,
            levels,
            horizon_factor: default_horizon(),
            steps_per_unit: default_steps(),
            replicates,
            seed,
            output: None,
            constants: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.require_interior_gamma()?;
        if self.levels.is_empty() {
            return Err(Error::Config("no levels given".into()));
        }
        for &u in &self.levels {
            ensure(u > 0.0 && u.is_finite(), "u", u, "levels must be positive")?;
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("levels must be strictly ascending".into()));
        }
        ensure(self.replicates >= 100, "replicates", self.replicates as f64, "must be at least 100")?;
        ensure(
            self.horizon_factor > 1.0 && self.horizon_factor.is_finite(),
            "horizon_factor",
            self.horizon_factor,
            "must exceed 1",
        )?;
        ensure(self.steps_per_unit >= 1, "steps_per_unit", 0.0, "must be at least 1")
    }

    /// Reads a JSON config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Asymptotic ruin probability at `u`, used as the predicted acceptance.
    pub fn predicted_acceptance(&self, u: f64) -> Result<f64> {
        Ok(ruin_prob_approx(u, &self.model, self.constants.as_ref())?.value)
    }

    /// Refuses levels whose predicted acceptance is below 10/replicates.
    pub fn check_feasible(&self) -> Result<()> {
        for &u in &self.levels {
            let predicted = self.predicted_acceptance(u)?;
            if predicted * (self.replicates as f64) < 10.0 {
                return Err(Error::TooRare {
                    u,
                    predicted,
                    replicates: self.replicates,
                    needed: (10.0 / predicted).ceil() as u64,
                });
            }
        }
        Ok(())
    }
}

/// Replicate stream for level index `k` of a conditional campaign.
pub fn passage_stream(seed: u64, k: usize) -> SeedStream {
    SeedStream::new(seed).domain(0x7a55_0000 + k as u64)
}

/// Grid on [0, K·t̃₀·u] and its step relative to A(u).
pub fn level_grid(config: &ExperimentConfig, u: f64) -> Result<(Grid, f64)> {
    let t_sim = config.horizon_factor * t_tilde0(&config.model) * u;
    let n = (config.horizon_factor * config.steps_per_unit as f64).ceil() as usize;
    let grid = Grid::new(t_sim, n)?;
    let ratio = grid.step() / a_scale(&config.model, u)?;
    if ratio > MAX_STEP_OVER_A {
        return Err(Error::GridTooCoarse {
            u,
            ratio,
            limit: MAX_STEP_OVER_A,
        });
    }
    Ok((grid, ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSample {
    pub u: f64,
    /// (τ₁ − t̃₀u)/A(u)
    pub z1: f64,
    /// (τ₂ − t̃₀u)/A(u)
    pub z2: f64,
    pub raw: PassageRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub u: f64,
    pub replicates: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub predicted_acceptance: f64,
    /// Ruined paths whose last exceedance is after 0.9 of the horizon.
    pub horizon_violations: u64,
    pub violation_rate: f64,
    pub horizon_invalid: bool,
    pub t_sim: f64,
    pub n_steps: usize,
    pub step_over_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub diagnostics: LevelDiagnostics,
    pub samples: Vec<ConditionalSample>,
}

/// One row of `report.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub u: f64,
    pub n: u64,
    pub accepted: u64,
    pub ks_z1: Option<f64>,
    pub ks_z2: Option<f64>,
    pub mean_z1: Option<f64>,
    pub sd_z1: Option<f64>,
    pub med_gap: Option<f64>,
}

impl LevelResult {
    pub fn z1(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.z1).collect()
    }

    pub fn z2(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.z2).collect()
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.z1, s.z2)).collect()
    }

    pub fn summary(&self) -> LevelSummary {
        let d = &self.diagnostics;
        let z1 = self.z1();
        let mut m = Moments::default();
        z1.iter().for_each(|&v| m.push(v));
        let nonempty = !z1.is_empty();
        let gaps: Vec<f64> = self.samples.iter().map(|s| s.z2 - s.z1).collect();
        LevelSummary {
            u: d.u,
            n: d.replicates,
            accepted: d.accepted,
            ks_z1: ks_distance(&z1, normal::cdf).ok(),
            ks_z2: ks_distance(&self.z2(), normal::cdf).ok(),
            mean_z1: nonempty.then_some(m.mean),
            sd_z1: (z1.len() > 1).then(|| m.std_dev()),
            med_gap: median(&gaps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRun {
    pub config: ExperimentConfig,
    pub levels: Vec<LevelResult>,
}

impl ConditionalRun {
    /// Any level with more than 1% late exceedances.
    pub fn invalid(&self) -> bool {
        self.levels.iter().any(|l| l.diagnostics.horizon_invalid)
    }
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Simulates `replicates` paths at one level and returns the ruined ones
/// with their replicate indices, in replicate order.
fn simulate_level(model: &ModelParams, grid: Grid, u: f64, replicates: u64, stream: SeedStream) -> Result<Vec<(u64, PassageRecord)>> {
    let sampler = FbmSampler::new(model.hurst, grid)?;
    let (gamma, drift) = (model.gamma, model.drift);
    let (hits, _, _) = map_reduce(
        replicates,
        || (Vec::new(), sampler.scratch(), vec![0.0; grid.len()]),
        |(acc, scratch, buf), r| {
            sampler.sample_into(&mut stream.rng(r), scratch, buf);
            apply_drift(buf, &grid, drift);
            let mut hit = [LevelHit::default()];
            scan_levels(buf, gamma, &[u], &mut hit);
            if hit[0].first.is_some() {
                acc.push((r, hit[0].record(&grid, u)));
            }
        },
        |a, b| a.0.extend(b.0),
    );
    Ok(hits)
}

/// Passage times conditioned on ruin, standardized, for every level.
pub fn run_conditional_passage(config: &ExperimentConfig) -> Result<ConditionalRun> {
    config.validate()?;
    config.check_feasible()?;
    let model = config.model;
    let t0 = t_tilde0(&model);
    let mut levels = Vec::with_capacity(config.levels.len());
    for (k, &u) in config.levels.iter().enumerate() {
        let (grid, step_over_a) = level_grid(config, u)?;
        let a = a_scale(&model, u)?;
        let hits = simulate_level(&model, grid, u, config.replicates, passage_stream(config.seed, k))?;
        let late = LATE_FRACTION * grid.t_max();
        let violations = hits.iter().filter(|(_, rec)| rec.tau2.is_some_and(|t| t > late)).count() as u64;
        let samples: Vec<ConditionalSample> = hits
            .into_iter()
            .filter_map(|(_, raw)| {
                let (t1, t2) = (raw.tau1?, raw.tau2?);
                Some(ConditionalSample {
                    u,
                    z1: (t1 - t0 * u) / a,
                    z2: (t2 - t0 * u) / a,
                    raw,
                })
            })
            .collect();
        let accepted = samples.len() as u64;
        let violation_rate = if accepted > 0 { violations as f64 / accepted as f64 } else { 0.0 };
        let horizon_invalid = violation_rate > MAX_VIOLATION_RATE;
        if horizon_invalid {
            log::warn!("u = {u}: {violations} of {accepted} ruined paths exceed the level late in the horizon");
        }
        levels.push(LevelResult {
            diagnostics: LevelDiagnostics {
                u,
                replicates: config.replicates,
                accepted,
                acceptance_rate: accepted as f64 / config.replicates as f64,
                predicted_acceptance: config.predicted_acceptance(u)?,
                horizon_violations: violations,
                violation_rate,
                horizon_invalid,
                t_sim: grid.t_max(),
                n_steps: grid.n_steps(),
                step_over_a,
            },
            samples,
        });
    }
    Ok(ConditionalRun {
        config: config.clone(),
        levels,
    })
}

/// Two-sided Kolmogorov–Smirnov distance between the empirical CDF of
/// `samples` and `cdf`, taken over the sample breakpoints.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("KS distance of an empty sample".into()));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Config("KS distance of a sample containing NaN".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let mut j = i;
        while j < s.len() && s[j] == x {
            j += 1;
        }
        // Empirical CDF jumps from i/n to j/n at x.
        d = d.max((j as f64 / n - cdf(x)).abs());
        d = d.max((cdf(x.next_down()) - i as f64 / n).abs());
        i = j;
    }
    Ok(d)
}

/// max over the grid of |F̂(x,y) − target(x,y)|.
pub fn joint_cdf_distance_to(
    pairs: &[(f64, f64)],
    x_grid: &[f64],
    y_grid: &[f64],
    target: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    if x_grid.is_empty() || y_grid.is_empty() {
        return Err(Error::Config("joint CDF distance needs a nonempty grid".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Config("joint CDF distance of an empty sample".into()));
    }
    let n = pairs.len() as f64;
    let mut d = 0.0f64;
    for &x in x_grid {
        let below: Vec<f64> = pairs.iter().filter(|p| p.0 <= x).map(|p| p.1).collect();
        for &y in y_grid {
            let f = below.iter().filter(|&&v| v <= y).count() as f64 / n;
            d = d.max((f - target(x, y)).abs());
        }
    }
    Ok(d)
}

/// Distance of the empirical joint CDF to Φ(min(x,y)).
pub fn joint_cdf_distance(pairs: &[(f64, f64)], x_grid: &[f64], y_grid: &[f64]) -> Result<f64> {
    joint_cdf_distance_to(pairs, x_grid, y_grid, |x, y| normal::cdf(x.min(y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinRow {
    pub u: f64,
    pub replicates: u64,
    pub exceedances: u64,
    pub empirical_p: f64,
    pub std_error: f64,
    pub predicted_p: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    /// Ruined paths whose last exceedance is late in the horizon.
    pub horizon_violations: u64,
}

/// Ruin frequencies on a common grid [0, K·t̃₀·u_max] with common random
/// numbers, so the frequencies are pathwise nonincreasing in u.
pub fn ruin_frequency_experiment(config: &ExperimentConfig) -> Result<Vec<RuinRow>> {
    config.validate()?;
    let model = config.model;
    let t0 = t_tilde0(&model);
    let (u_min, u_max) = (config.levels[0], config.levels[config.levels.len() - 1]);
    let step = t0 * u_min / config.steps_per_unit as f64;
    let t_sim = config.horizon_factor * t0 * u_max;
    let grid = Grid::new(t_sim, (t_sim / step).ceil() as usize)?;
    let ratio = grid.step() / a_scale(&model, u_min)?;
    if ratio > MAX_STEP_OVER_A {
        return Err(Error::GridTooCoarse {
            u: u_min,
            ratio,
            limit: MAX_STEP_OVER_A,
        });
    }
    let predicted = config
        .levels
        .iter()
        .map(|&u| ruin_prob_leading(u, &model, config.constants.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let sampler = FbmSampler::new(model.hurst, grid)?;
    let stream = SeedStream::new(config.seed).domain(0x4a11);
    let levels = &config.levels;
    let late = LATE_FRACTION * t_sim;
    let late_index = (0..grid.len()).find(|&i| grid.time(i) > late).unwrap_or(grid.len());
    let k = levels.len();
    let (counts, late_counts, ..) = map_reduce(
        config.replicates,
        || (vec![0u64; k], vec![0u64; k], sampler.scratch(), vec![0.0; grid.len()], vec![LevelHit::default(); k]),
        |(counts, late_counts, scratch, buf, hits), r| {
            sampler.sample_into(&mut stream.rng(r), scratch, buf);
            apply_drift(buf, &grid, model.drift);
            scan_levels(buf, model.gamma, levels, hits);
            for (j, h) in hits.iter().enumerate() {
                if h.first.is_some() {
                    counts[j] += 1;
                }
                if h.last.is_some_and(|i| i >= late_index) {
                    late_counts[j] += 1;
                }
            }
        },
        |a, b| {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| *x += y);
            a.1.iter_mut().zip(&b.1).for_each(|(x, y)| *x += y);
        },
    );
    let n = config.replicates as f64;
    Ok(levels
        .iter()
        .zip(&predicted)
        .zip(counts.iter().zip(&late_counts))
        .map(|((&u, &pred), (&c, &late))| {
            let p = c as f64 / n;
            let se = (p * (1.0 - p) / (n - 1.0)).sqrt();
            RuinRow {
                u,
                replicates: config.replicates,
                exceedances: c,
                empirical_p: p,
                std_error: se,
                predicted_p: pred,
                ratio: p / pred,
                ratio_se: se / pred,
                horizon_violations: late,
            }
        })
        .collect())
}

/// One arm of the γ-invariance comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaArm {
    pub gamma: f64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    pub predicted_acceptance: f64,
    pub ks: f64,
    /// 95% half-width of the KS statistic.
    pub band: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResult {
    pub u: f64,
    pub arms: [GammaArm; 2],
    pub bands_overlap: bool,
    /// Empirical acceptance rates are ordered as the predictions are.
    pub acceptance_ordered: bool,
}

/// Conditional z1 samples at two reflection constants and one level.
pub fn gamma_invariance(base: &ExperimentConfig, gammas: [f64; 2], u: f64) -> Result<InvarianceResult> {
    let arm = |k: usize, gamma: f64| -> Result<GammaArm> {
        let mut cfg = base.clone();
        cfg.model = ModelParams::new(base.model.hurst, gamma, base.model.drift)?;
        cfg.levels = vec![u];
        cfg.seed = base.seed.wrapping_add(k as u64);
        let run = run_conditional_passage(&cfg)?;
        let level = &run.levels[0];
        let z1 = level.z1();
        let ks = ks_distance(&z1, normal::cdf)?;
        Ok(GammaArm {
            gamma,
            accepted: level.diagnostics.accepted,
            acceptance_rate: level.diagnostics.acceptance_rate,
            predicted_acceptance: ruin_prob_leading(u, &cfg.model, cfg.constants.as_ref())?,
            ks,
            band: KS_95 / (z1.len() as f64).sqrt(),
        })
    };
    let arms = [arm(0, gammas[0])?, arm(1, gammas[1])?];
    let bands_overlap = (arms[0].ks - arms[1].ks).abs() <= arms[0].band + arms[1].band;
    let acceptance_ordered = (arms[0].acceptance_rate - arms[1].acceptance_rate)
        * (arms[0].predicted_acceptance - arms[1].predicted_acceptance)
        > 0.0;
    Ok(InvarianceResult {
        u,
        arms,
        bands_overlap,
        acceptance_ordered,
    })
}

/// Everything in `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub code_version: String,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
    pub master_seed: u64,
    pub invalid: bool,
    pub levels: Vec<LevelReport>,
    pub limitation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub summary: LevelSummary,
    pub diagnostics: LevelDiagnostics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Also write `samples_u<value>.csv`.
    pub samples: bool,
    /// Write timestamp 0 regardless of the clock.
    pub zero_timestamp: bool,
}

/// Version string of this build (git describe when available).
pub fn code_version() -> &'static str {
    env!("RFBM_CODE_VERSION")
}

fn timestamp(zero: bool) -> u64 {
    if zero {
        return 0;
    }
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl Report {
    pub fn new(run: &ConditionalRun, zero_timestamp: bool) -> Self {
        Self {
            config: run.config.clone(),
            code_version: code_version().to_string(),
            timestamp: timestamp(zero_timestamp),
            master_seed: run.config.seed,
            invalid: run.invalid(),
            levels: run
                .levels
                .iter()
                .map(|l| LevelReport {
                    summary: l.summary(),
                    diagnostics: l.diagnostics,
                })
                .collect(),
            limitation: LIMITATION.to_string(),
        }
    }
}

/// CSV header of `report.csv`.
pub const REPORT_COLUMNS: [&str; 8] = ["u", "n", "accepted", "ks_z1", "ks_z2", "mean_z1", "sd_z1", "med_gap"];

pub fn samples_file_name(u: f64) -> String {
    format!("samples_u{u}.csv")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if !e.is_io_error() {
        return Error::Csv(e);
    }
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        _ => unreachable!("checked above"),
    }
}

/// Writes `report.csv`, `report.json` and optionally the sample files into
/// `dir`. Returns the paths written.
pub fn write_report(run: &ConditionalRun, dir: &Path, options: ReportOptions) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    w.write_record(REPORT_COLUMNS).map_err(|e| csv_err(&csv_path, e))?;
    for l in &run.levels {
        w.serialize(l.summary()).map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    written.push(csv_path);

    let json_path = dir.join("report.json");
    let report = Report::new(run, options.zero_timestamp);
    fs::write(&json_path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    if options.samples {
        for l in &run.levels {
            let path = dir.join(samples_file_name(l.diagnostics.u));
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(["z1", "z2"]).map_err(|e| csv_err(&path, e))?;
            for s in &l.samples {
                w.write_record([s.z1.to_string(), s.z2.to_string()]).map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Parses `report.json`.
pub fn read_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn bm_config(levels: Vec<f64>, replicates: u64) -> ExperimentConfig {
        ExperimentConfig::new(ModelParams::new(0.5, 0.5, 1.0).unwrap(), levels, replicates, 11)
    }

    #[test]
    fn config_validation() {
        assert!(bm_config(vec![1.0, 2.0], 100).validate().is_ok());
        assert!(bm_config(vec![2.0, 1.0], 100).validate().is_err());
        assert!(bm_config(vec![], 100).validate().is_err());
        assert!(bm_config(vec![1.0], 99).validate().is_err());
        let mut c = bm_config(vec![1.0], 100);
        c.model.gamma = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = bm_config(vec![1.0, 2.5], 1000);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        let minimal = r#"{"model":{"hurst":0.5,"gamma":0.5,"drift":1.0},"levels":[1.0],"replicates":200,"seed":3}"#;
        let parsed: ExperimentConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(parsed.horizon_factor, 3.0);
        assert_eq!(parsed.steps_per_unit, 512);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn too_rare_is_refused() {
        let c = bm_config(vec![6.0], 1000);
        match run_conditional_passage(&c) {
            Err(Error::TooRare { needed, .. }) => assert!(needed > 1000),
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn off_half_hurst_needs_constants() {
        let c = ExperimentConfig::new(ModelParams::new(0.7, 0.5, 1.0).unwrap(), vec![1.0], 200, 1);
        assert!(matches!(run_conditional_passage(&c), Err(Error::NeedsEstimatedConstant(_))));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let mut c = bm_config(vec![1.0], 200);
        c.steps_per_unit = 10;
        assert!(matches!(run_conditional_passage(&c), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[0.0], normal::cdf).unwrap(), 0.5);
        assert!(ks_distance(&[], normal::cdf).is_err());
        let data = [0.3, -1.0, 2.0, 0.3, 5.0];
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        let ecdf = |x: f64| sorted.iter().filter(|&&v| v <= x).count() as f64 / sorted.len() as f64;
        assert_eq!(ks_distance(&data, ecdf).unwrap(), 0.0);
    }

    #[test]
    fn ks_under_the_null() {
        // Exact samples: √n·KS exceeds 1.95 with probability below 0.1%.
        let stream = SeedStream::new(2);
        let mut rng = stream.rng(0);
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        assert!(ks_distance(&x, normal::cdf).unwrap() < 1.95 / (n as f64).sqrt());
    }

    #[test]
    fn joint_distance_controls() {
        let grid: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.15).collect();
        assert!(joint_cdf_distance(&[(0.0, 0.0)], &[], &grid).is_err());
        let mut rng = SeedStream::new(5).rng(0);
        let z: Vec<f64> = (0..4000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let same: Vec<(f64, f64)> = z.iter().map(|&v| (v, v)).collect();
        let d = joint_cdf_distance(&same, &grid, &grid).unwrap();
        // Perfect dependence: the joint distance is the 1-D distance on the grid.
        let on_grid = grid
            .iter()
            .map(|&x| (z.iter().filter(|&&v| v <= x).count() as f64 / z.len() as f64 - normal::cdf(x)).abs())
            .fold(0.0, f64::max);
        assert!((d - on_grid).abs() < 1e-12);
        assert!(d <= ks_distance(&z, normal::cdf).unwrap() + 1e-12);

        let indep: Vec<(f64, f64)> = z.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        assert!(joint_cdf_distance(&indep, &grid, &grid).unwrap() > 0.2);
        // Surfaces differ by 1/4 at the origin.
        let gap = joint_cdf_distance_to(&[(0.0, 0.0)], &[0.0], &[0.0], |x, y| normal::cdf(x) * normal::cdf(y)).unwrap()
            - joint_cdf_distance(&[(0.0, 0.0)], &[0.0], &[0.0]).unwrap();
        assert!((gap - 0.25).abs() < 1e-12);
    }

    #[test]
    fn conditional_samples_are_ordered_and_standardized() {
        let c = bm_config(vec![1.0, 1.5], 3000);
        let run = run_conditional_passage(&c).unwrap();
        for l in &run.levels {
            let d = &l.diagnostics;
            assert!(d.accepted > 100);
            assert!(d.step_over_a <= MAX_STEP_OVER_A);
            let a = a_scale(&c.model, d.u).unwrap();
            for s in &l.samples {
                assert!(s.z2 >= s.z1);
                assert!(s.raw.ruined);
                assert!((s.raw.tau1.unwrap() - (d.u + a * s.z1)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ruin_frequencies_nest() {
        let c = bm_config(vec![0.5, 1.0, 1.5, 2.0], 4000);
        let rows = ruin_frequency_experiment(&c).unwrap();
        assert!(rows.windows(2).all(|w| w[1].exceedances <= w[0].exceedances));
        assert!((rows[3].predicted_p - (-4f64).exp() / 0.5).abs() < 1e-15);
    }

    #[test]
    fn report_files_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = bm_config(vec![1.0], 500);
        let run = run_conditional_passage(&c).unwrap();
        let opts = ReportOptions {
            samples: true,
            zero_timestamp: true,
        };
        let paths = write_report(&run, dir.path(), opts).unwrap();
        assert_eq!(paths.len(), 3);
        let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), REPORT_COLUMNS.join(","));
        let back = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(back, Report::new(&run, true));
        assert_eq!(back.timestamp, 0);
        let samples = fs::read_to_string(dir.path().join("samples_u1.csv")).unwrap();
        assert_eq!(samples.lines().count() as u64, run.levels[0].diagnostics.accepted + 1);

        let again = tempfile::tempdir().unwrap();
        write_report(&run_conditional_passage(&c).unwrap(), again.path(), opts).unwrap();
        for name in ["report.csv", "report.json", "samples_u1.csv"] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        let run = run_conditional_passage(&bm_config(vec![1.0], 200)).unwrap();
        match write_report(&run, &file.join("sub"), ReportOptions::default()) {
            Err(Error::Io { path, .. }) => assert!(path.starts_with(&file)),
            other => panic!("expected an I/O error, got {other:?}"),
        }
    }
}
