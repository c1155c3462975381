//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Statistical criteria run with fixed seeds. A FAIL line is a measured
//! outcome, not a crash; the process exits 0 unless `ACCEPTANCE_STRICT` is
//! set, so the regular test run stays green while the report stays honest.

use std::time::Instant;

use reflected_fbm::asymptotics::{
    argmax_var_y, corr_expansion, corr_y, var_expansion, var_y, ConstantPair, FieldSpec,
};
use reflected_fbm::constants::{
    default_limit_settings, default_piterbarg_horizon, default_piterbarg_settings, pickands_closed,
    pickands_limit_estimate, piterbarg_closed, piterbarg_limit_estimate, EstimateWithError,
};
use reflected_fbm::field::{lemma_constants, verify_piterbarg_lemma, verify_thm21, FieldMc, PiterbargLemma, RegionOffset, Threshold};
use reflected_fbm::harness::{
    gamma_invariance, joint_cdf_distance, joint_cdf_distance_to, ks_distance, ruin_frequency_experiment,
    run_conditional_passage, write_report, ExperimentConfig, ReportOptions,
};
use reflected_fbm::mc::{fold_chunks, merge_in_order, with_threads, Moments, SeedStream};
use reflected_fbm::{normal, ModelParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn model(h: f64, g: f64, c: f64) -> ModelParams {
    ModelParams::new(h, g, c).unwrap()
}

/// Horizon used by the conditional campaigns below; the default K = 3 puts
/// too many last exceedances near the end of the window at desk-scale u.
const CAMPAIGN_HORIZON: f64 = 10.0;

fn within_3se(est: &EstimateWithError, target: f64) -> bool {
    (est.value - target).abs() <= 3.0 * est.std_error
}

fn criterion_1() -> Outcome {
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let closed = [
        ("H_1", pickands_closed(1.0), 1.0),
        ("H_2", pickands_closed(2.0), 1.0 / sqrt_pi),
        ("P_1^1", piterbarg_closed(1.0, 1.0), 2.0),
        ("P_2^1", piterbarg_closed(2.0, 1.0), 0.5 * (1.0 + 2f64.sqrt())),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, got, want) in closed {
        let exact = got.is_some_and(|v| (v - want).abs() <= 4.0 * f64::EPSILON * want);
        pass &= exact;
        parts.push(format!("{name} closed={}", got.map_or("none".into(), |v| format!("{v:.6}"))));
    }
    let mut mc = Vec::new();
    for alpha in [1.0, 2.0] {
        let t = Instant::now();
        let (ladder, settings) = default_limit_settings(alpha, 101);
        let est = pickands_limit_estimate(alpha, &ladder, &settings).unwrap().estimate;
        mc.push((format!("H_{alpha}"), est, pickands_closed(alpha).unwrap(), t.elapsed().as_secs_f64()));
    }
    for alpha in [1.0, 2.0] {
        let t = Instant::now();
        let est = piterbarg_limit_estimate(
            alpha,
            1.0,
            default_piterbarg_horizon(alpha, 1.0),
            &default_piterbarg_settings(202),
        )
        .unwrap()
        .extrapolated;
        mc.push((format!("P_{alpha}^1"), est, piterbarg_closed(alpha, 1.0).unwrap(), t.elapsed().as_secs_f64()));
    }
    for (name, est, want, secs) in mc {
        let ok = within_3se(&est, want) && est.std_error <= 0.05 * est.value && secs <= 60.0;
        pass &= ok;
        parts.push(format!(
            "{name} mc={:.4}±{:.4} ({:.1}% , {secs:.0}s){}",
            est.value,
            est.std_error,
            100.0 * est.std_error / est.value,
            if ok { "" } else { " !" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut pass = true;
    let mut worst = 0.0f64;
    for h in [0.3, 0.5, 0.7] {
        for c in [0.5, 1.0, 2.0] {
            let q = model(h, 0.5, c);
            let t0 = h / (c * (1.0 - h));
            let sigma = h.powf(h) * (1.0 - h).powf(1.0 - h) / c.powf(h);
            let m = argmax_var_y(&q, 2.5 * t0, 400).unwrap();
            let rel = (m.value / sigma - 1.0).abs();
            worst = worst.max(rel);
            pass &= m.s <= m.cell && (m.t - t0).abs() <= m.cell && rel <= 1e-3;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs <= 10.0;
    outcome(pass, format!("9 combos, worst max-value error {worst:.2e}, {secs:.2}s"))
}

fn criterion_3() -> Outcome {
    let eps = 1e-4f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for h in [0.3, 0.5, 0.7] {
        let q = model(h, 0.5, 1.0);
        let t0 = h / (1.0 - h);
        let sigma = h.powf(h) * (1.0 - h).powf(1.0 - h);
        let s = eps.powf(1.0 / h);
        let mut ratios = Vec::new();
        for t in [t0 - eps, t0 + eps] {
            ratios.push((1.0 - var_y(s, t, &q).unwrap() / sigma) / var_expansion(s, t, &q));
        }
        ratios.push((1.0 - corr_y(0.0, s, t0, t0 + eps, &q).unwrap()) / corr_expansion(0.0, s, t0, t0 + eps, &q));
        for r in ratios {
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    outcome(
        (0.99..=1.01).contains(&lo) && (0.99..=1.01).contains(&hi),
        format!("ratios in [{lo:.5}, {hi:.5}] at offset 1e-4"),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::new(model(0.5, 0.5, 1.0), vec![2.0, 2.5, 3.0], 1_000_000, 4);
    cfg.horizon_factor = CAMPAIGN_HORIZON;
    let rows = ruin_frequency_experiment(&cfg).unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    // Prediction e^{−2cu}/(1−γ), evaluated here directly.
    let pred_ok = rows
        .iter()
        .all(|r| (r.predicted_p - (-2.0 * r.u).exp() / 0.5).abs() <= 1e-15);
    let toward_one = ratios.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs());
    let last = rows.last().unwrap();
    let band = (0.6..=1.4).contains(&last.ratio);
    let detail = rows
        .iter()
        .map(|r| format!("u={} ratio={:.4}±{:.4}", r.u, r.ratio, r.ratio_se))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        pred_ok && toward_one && band,
        format!(
            "{detail}; monotone toward 1: {toward_one}; u=3 in [0.6,1.4]: {band}; {:.0}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

struct TrendData {
    pass: bool,
    detail: String,
    large_pairs: Vec<(f64, f64)>,
    u_large: f64,
}

fn run_level(u: f64, seed: u64) -> reflected_fbm::harness::LevelResult {
    let m = model(0.5, 0.5, 1.0);
    let mut cfg = ExperimentConfig::new(m, vec![u], 100, seed);
    cfg.horizon_factor = CAMPAIGN_HORIZON;
    // Enough replicates for about 2500 accepted paths.
    cfg.replicates = (2500.0 / cfg.predicted_acceptance(u).unwrap()).ceil() as u64;
    run_conditional_passage(&cfg).unwrap().levels.remove(0)
}

fn criterion_5() -> TrendData {
    let t = Instant::now();
    let (u_small, u_large) = (1.5, 3.0);
    let seeds = 10u64;
    let mut ks = [0.0; 2];
    let mut gaps: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut min_accepted = u64::MAX;
    let mut invalid = false;
    let mut large_pairs = Vec::new();
    for seed in 0..seeds {
        for (k, u) in [u_small, u_large].into_iter().enumerate() {
            let level = run_level(u, 1000 + seed);
            min_accepted = min_accepted.min(level.diagnostics.accepted);
            invalid |= level.diagnostics.horizon_invalid;
            ks[k] += ks_distance(&level.z1(), normal::cdf).unwrap() / seeds as f64;
            gaps[k].extend(level.samples.iter().map(|s| s.z2 - s.z1));
            if k == 1 {
                large_pairs.extend(level.pairs());
            }
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let med = [median(&mut gaps[0]), median(&mut gaps[1])];
    let pass = ks[1] < ks[0] && med[1] < med[0] && min_accepted >= 2000 && !invalid;
    TrendData {
        pass,
        detail: format!(
            "mean KS(z1) u={u_small}: {:.4}, u={u_large}: {:.4}; median gap {:.4} -> {:.4}; min accepted {min_accepted}; horizon-invalid {invalid}; {:.0}s",
            ks[0],
            ks[1],
            med[0],
            med[1],
            t.elapsed().as_secs_f64()
        ),
        large_pairs,
        u_large,
    }
}

fn criterion_6(data: &TrendData) -> Outcome {
    let grid: Vec<f64> = (-12..=12).map(|k| k as f64 * 0.25).collect();
    let d_min = joint_cdf_distance(&data.large_pairs, &grid, &grid).unwrap();
    let d_ind = joint_cdf_distance_to(&data.large_pairs, &grid, &grid, |x, y| normal::cdf(x) * normal::cdf(y)).unwrap();
    outcome(
        d_ind >= 2.0 * d_min,
        format!(
            "u={} n={}: distance to Phi(min)={d_min:.4}, to Phi(x)Phi(y)={d_ind:.4}, factor {:.3}",
            data.u_large,
            data.large_pairs.len(),
            d_ind / d_min
        ),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let u = 2.5;
    let mut base = ExperimentConfig::new(model(0.5, 0.5, 1.0), vec![u], 400_000, 77);
    base.horizon_factor = CAMPAIGN_HORIZON;
    let r = gamma_invariance(&base, [0.25, 0.75], u).unwrap();
    let feasible = r.arms.iter().all(|a| a.predicted_acceptance >= 1e-3);
    let [a, b] = r.arms;
    outcome(
        r.bands_overlap && r.acceptance_ordered && feasible,
        format!(
            "u={u}: KS γ=0.25 {:.4}±{:.4}, γ=0.75 {:.4}±{:.4}, overlap {}; acceptance {:.4} vs {:.4} (predicted {:.4} vs {:.4}); {:.0}s",
            a.ks,
            a.band,
            b.ks,
            b.band,
            r.bands_overlap,
            a.acceptance_rate,
            b.acceptance_rate,
            a.predicted_acceptance,
            b.predicted_acceptance,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let spec = FieldSpec::new(2.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let pair = ConstantPair {
        pickands: EstimateWithError::closed(1.0 / sqrt_pi),
        piterbarg: EstimateWithError::closed(0.5 * (1.0 + 2f64.sqrt())),
    };
    let rows = verify_thm21(&spec, RegionOffset::Fixed(0.0), &[2.5, 3.0, 3.5], false, Some(&pair), &FieldMc::new(2_000_000, 8)).unwrap();
    let toward_one = rows.windows(2).all(|w| (w[1].ratio - 1.0).abs() < (w[0].ratio - 1.0).abs());
    let last = rows.last().unwrap();
    let band = (0.5..=1.5).contains(&last.ratio);
    let detail = rows
        .iter()
        .map(|r| format!("u={} ratio={:.3}±{:.3}", r.u, r.ratio, r.ratio_se))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        toward_one && band,
        format!(
            "{detail}; monotone toward 1: {toward_one}; u=3.5 in [0.5,1.5]: {band}; {:.0}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let cfg = PiterbargLemma {
        alpha1: 1.0,
        alpha2: 1.0,
        b1: 0.5,
        b2: 1.0,
        s_len: 2.0,
        t1: 0.0,
        t2: 2.0,
        n_s: 16,
        n_t: 16,
        threshold: Threshold::Level,
    };
    let constants = lemma_constants(&cfg, 400_000, 91).unwrap();
    let row = verify_piterbarg_lemma(&cfg, &[4.0], &constants, &FieldMc::new(2_000_000, 92)).unwrap()[0];
    let combined = row.std_error.hypot(row.predicted_se);
    let agree = (row.empirical_p - row.predicted_p).abs() <= 3.0 * combined;
    outcome(
        agree,
        format!(
            "u=4: field {:.4e}±{:.2e}, constants {:.4e}±{:.2e}, ratio {:.3}, |diff|/SE {:.2}; {:.0}s",
            row.empirical_p,
            row.std_error,
            row.predicted_p,
            row.predicted_se,
            row.ratio,
            (row.empirical_p - row.predicted_p).abs() / combined,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut checks = Vec::new();

    let cfg = ExperimentConfig::new(model(0.5, 0.5, 1.0), vec![1.0, 1.5], 5000, 3);
    let one = with_threads(Some(1), || ruin_frequency_experiment(&cfg).unwrap());
    let many = with_threads(Some(3), || ruin_frequency_experiment(&cfg).unwrap());
    checks.push(("ruin-freq threads 1 vs 3", one == many));

    let runs: Vec<_> = [1, 3]
        .into_iter()
        .map(|n| with_threads(Some(n), || run_conditional_passage(&cfg).unwrap()))
        .collect();
    checks.push(("conditional threads 1 vs 3", runs[0] == runs[1]));

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let opts = ReportOptions {
        samples: true,
        zero_timestamp: true,
    };
    for (run, dir) in runs.iter().zip(&dirs) {
        write_report(run, dir.path(), opts).unwrap();
    }
    let same_files = ["report.csv", "report.json", "samples_u1.csv", "samples_u1.5.csv"].iter().all(|f| {
        std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap()
    });
    checks.push(("report bytes", same_files));

    let spec = FieldSpec::new(2.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
    let field = |n| with_threads(Some(n), || verify_thm21(&spec, RegionOffset::Fixed(0.0), &[2.5], false, None, &FieldMc::new(20_000, 5)).unwrap());
    checks.push(("field threads 1 vs 3", field(1) == field(3)));

    // Shuffled completion order merges to the same bits.
    let stream = SeedStream::new(9);
    let parts = fold_chunks(20_000, Moments::default, |m: &mut Moments, r| {
        use rand::Rng;
        m.push(stream.rng(r).random::<f64>())
    });
    let tagged: Vec<(u64, Moments)> = parts.into_iter().enumerate().map(|(i, m)| (i as u64, m)).collect();
    let reference = merge_in_order(tagged.clone(), |a, b| a.merge(&b)).unwrap();
    let mut shuffled = tagged;
    let mut rng = SeedStream::new(10).rng(0);
    use rand::seq::SliceRandom;
    let mut all_equal = true;
    for _ in 0..20 {
        shuffled.shuffle(&mut rng);
        let m = merge_in_order(shuffled.clone(), |a, b| a.merge(&b)).unwrap();
        all_equal &= m.mean.to_bits() == reference.mean.to_bits() && m.variance().to_bits() == reference.variance().to_bits();
    }
    checks.push(("shuffled merge", all_equal));

    let pass = checks.iter().all(|(_, ok)| *ok);
    outcome(
        pass,
        checks
            .iter()
            .map(|(n, ok)| format!("{n}: {}", if *ok { "identical" } else { "DIFFERENT" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn report(n: usize, title: &str, o: &Outcome) -> bool {
    println!("{} criterion {n} ({title}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let start = Instant::now();
    let mut results = Vec::new();
    results.push(report(1, "closed-form and Monte Carlo constants", &criterion_1()));
    results.push(report(2, "variance geometry", &criterion_2()));
    results.push(report(3, "expansion ratios", &criterion_3()));
    results.push(report(4, "H=1/2 ruin oracle", &criterion_4()));
    let trend = criterion_5();
    results.push(report(
        5,
        "passage-time trend",
        &Outcome {
            pass: trend.pass,
            detail: trend.detail.clone(),
        },
    ));
    results.push(report(6, "complete dependence", &criterion_6(&trend)));
    results.push(report(7, "gamma invariance", &criterion_7()));
    results.push(report(8, "field supremum at beta=2", &criterion_8()));
    results.push(report(9, "two-dimensional Piterbarg lemma", &criterion_9()));
    results.push(report(10, "determinism", &criterion_10()));
    let passed = results.iter().filter(|p| **p).count();
    println!(
        "acceptance: {passed}/{} criteria pass ({:.0}s)",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed < results.len() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
