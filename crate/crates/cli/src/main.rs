use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};

use reflected_fbm::asymptotics::{
    a_const, a_scale, ruin_prob_approx, ruin_prob_half_hurst, sigma_max, t_tilde0, u_tilde, ConstantPair, FieldSpec,
};
use reflected_fbm::constants::{
    default_limit_settings, default_piterbarg_horizon, default_piterbarg_settings, pickands_closed,
    pickands_limit_estimate, piterbarg_closed, EstimateMethod, piterbarg_limit_estimate, EstimateWithError, McSettings,
};
use reflected_fbm::fbm::{apply_drift, sample_fbm, Grid};
use reflected_fbm::field::{
    lemma_constants, verify_piterbarg_lemma, verify_thm21, write_rows, FieldMc, PiterbargLemma, RegionOffset,
    Threshold, VerifyRow, DEFAULT_CELL_POINTS, DEFAULT_POINT_BUDGET,
};
use reflected_fbm::harness::{
    ruin_frequency_experiment, run_conditional_passage, write_report, ExperimentConfig, ReportOptions,
};
use reflected_fbm::mc::with_threads;
use reflected_fbm::reflected::{passage_times, reflect};
use reflected_fbm::{Error, ModelParams};

const DEFAULT_OUT: &str = "rfbm-out";

#[derive(Parser)]
#[command(
    name = "rfbm",
    version,
    about = "Simulation and asymptotics of passage times for gamma-reflected fractional Brownian motion with drift"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed of all random streams [integer]
    #[arg(long, global = true, help_heading = "Global options")]
    seed: Option<u64>,
    /// Directory for output files [path, default rfbm-out]
    #[arg(long, global = true, help_heading = "Global options")]
    out: Option<PathBuf>,
    /// Worker threads [count, default all cores]
    #[arg(long, global = true, help_heading = "Global options")]
    threads: Option<usize>,
    /// JSON config file; flags override its keys [path]
    #[arg(long, global = true, help_heading = "Global options")]
    config: Option<PathBuf>,
    /// Print errors only [switch]
    #[arg(long, global = true, help_heading = "Global options")]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form normalizers and the ruin-probability asymptotic
    Formulas(FormulaArgs),
    /// Passage times conditioned on ruin, standardized, with report files
    Passage(PassageArgs),
    /// Ruin frequencies against the asymptotic prediction
    RuinFreq(CampaignArgs),
    /// Pickands or Piterbarg constant: closed form and Monte Carlo estimate
    Constants(ConstantArgs),
    /// Gaussian random field checks
    #[command(subcommand)]
    Field(FieldCommand),
    /// One input path, its reflection and passage times, as CSV
    SamplePath(SamplePathArgs),
}

#[derive(Subcommand)]
enum FieldCommand {
    /// Field supremum over the first shrinking rectangle against its asymptotic
    VerifyThm21(Thm21Args),
    /// Two-dimensional Piterbarg lemma: field Monte Carlo against constants
    VerifyPiterbarg(PiterbargArgs),
}

#[derive(Args)]
struct ModelFlags {
    /// Hurst index H, in (0, 1) [dimensionless]
    #[arg(long, allow_negative_numbers = true)]
    hurst: Option<f64>,
    /// Reflection constant gamma, in [0, 1] [dimensionless]
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Drift c > 0 of the input X_H(t) - c t [per unit time]
    #[arg(long = "c", allow_negative_numbers = true)]
    c: Option<f64>,
}

#[derive(Args)]
struct ConstantFlags {
    /// Estimate of the Pickands constant H_2H, needed when H != 1/2 [dimensionless]
    #[arg(long)]
    pickands: Option<f64>,
    /// Standard error of --pickands [dimensionless, default 0]
    #[arg(long)]
    pickands_se: Option<f64>,
    /// Estimate of the Piterbarg constant, needed when no closed form exists [dimensionless]
    #[arg(long)]
    piterbarg: Option<f64>,
    /// Standard error of --piterbarg [dimensionless, default 0]
    #[arg(long)]
    piterbarg_se: Option<f64>,
}

#[derive(Args)]
struct FormulaArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Level u [workload units]
    #[arg(long, allow_negative_numbers = true)]
    u: Option<f64>,
    #[command(flatten)]
    constants: ConstantFlags,
}

#[derive(Args)]
struct CampaignArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Levels u, comma separated, strictly ascending [workload units]
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Simulated horizon K, as a multiple of t0 u [dimensionless, default 3]
    #[arg(long)]
    horizon_factor: Option<f64>,
    /// Grid steps per t0 u of simulated time [count, default 512]
    #[arg(long)]
    steps_per_unit: Option<usize>,
    /// Simulated paths per level [count, at least 100]
    #[arg(long)]
    replicates: Option<u64>,
    #[command(flatten)]
    constants: ConstantFlags,
}

#[derive(Args)]
struct PassageArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Also write samples_u<value>.csv with columns z1,z2 [switch]
    #[arg(long)]
    samples: bool,
}

#[derive(Args)]
struct ConstantArgs {
    /// Index alpha, in (0, 2] [dimensionless]
    #[arg(long)]
    alpha: Option<f64>,
    /// Piterbarg penalty a > 0; omit for the Pickands constant [dimensionless]
    #[arg(long)]
    a: Option<f64>,
    /// Interval lengths T of the Pickands ladder, comma separated [time units]
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
    /// Truncation S of the Piterbarg interval [0, S] [time units]
    #[arg(long)]
    horizon: Option<f64>,
    /// Monte Carlo replicates [count]
    #[arg(long)]
    replicates: Option<u64>,
    /// Grid intervals per simulated path [count]
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct Thm21Args {
    /// Smoothness index beta, in (0, 2], not 1 [dimensionless, default 2]
    #[arg(long)]
    beta: Option<f64>,
    /// Variance coefficient b1 of s^beta [dimensionless, default 1]
    #[arg(long)]
    b1: Option<f64>,
    /// Variance coefficient b2 of |t - t0|^2 [dimensionless, default 1]
    #[arg(long)]
    b2: Option<f64>,
    /// Variance cross coefficient b3 [dimensionless, default 0]
    #[arg(long)]
    b3: Option<f64>,
    /// Correlation coefficient a1 along s [dimensionless, default 1]
    #[arg(long)]
    a1: Option<f64>,
    /// Correlation coefficient a2 along t [dimensionless, default 1]
    #[arg(long)]
    a2: Option<f64>,
    /// Location t0 of the variance maximum [time units, default 1]
    #[arg(long)]
    t0: Option<f64>,
    /// Right edge offset x of the rectangle, t0 + x/u [units of 1/u, default 0]
    #[arg(long, conflicts_with = "large_x")]
    x: Option<f64>,
    /// Large-x mode: x = ln u and the prediction drops the Phi factor [switch]
    #[arg(long)]
    large_x: bool,
    /// Levels u, comma separated [field units, default 2.5,3,3.5]
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Simulated fields per level [count, default 200000]
    #[arg(long)]
    replicates: Option<u64>,
    /// Grid points per Pickands cell u^(-2/beta) along each axis [count, default 8]
    #[arg(long)]
    cell_points: Option<f64>,
    /// Largest number of grid points [count, default 4096]
    #[arg(long)]
    budget: Option<usize>,
    #[command(flatten)]
    constants: ConstantFlags,
}

#[derive(Clone, Copy, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ThresholdArg {
    Level,
    Shifted,
}

#[derive(Args)]
struct PiterbargArgs {
    /// Index alpha1 along s, in (0, 2] [dimensionless, default 1]
    #[arg(long)]
    alpha1: Option<f64>,
    /// Index alpha2 along t, in (0, 2] [dimensionless, default 1]
    #[arg(long)]
    alpha2: Option<f64>,
    /// Weight coefficient b1 >= 0 along s; 0 uses a Pickands constant [dimensionless, default 0.5]
    #[arg(long)]
    b1: Option<f64>,
    /// Weight coefficient b2 > 0 along t [dimensionless, default 1]
    #[arg(long)]
    b2: Option<f64>,
    /// Scaled s-extent S of [0, S] [scaled time units, default 2]
    #[arg(long)]
    s_len: Option<f64>,
    /// Scaled left end T1 of the t-interval [scaled time units, default 0]
    #[arg(long)]
    t1: Option<f64>,
    /// Scaled right end T2 of the t-interval [scaled time units, default 2]
    #[arg(long)]
    t2: Option<f64>,
    /// Grid intervals along s, even [count, default 16]
    #[arg(long)]
    n_s: Option<usize>,
    /// Grid intervals along t, even [count, default 16]
    #[arg(long)]
    n_t: Option<usize>,
    /// Threshold g(u): level is u, shifted is u + 1/u [choice, default level]
    #[arg(long, value_enum)]
    threshold: Option<ThresholdArg>,
    /// Levels u, comma separated [field units, default 3,3.5,4]
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Simulated fields per level [count, default 200000]
    #[arg(long)]
    replicates: Option<u64>,
    /// Replicates for each one-dimensional constant [count, default 100000]
    #[arg(long)]
    constant_replicates: Option<u64>,
}

#[derive(Args)]
struct SamplePathArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Path horizon [time units, default 10]
    #[arg(long)]
    t_max: Option<f64>,
    /// Grid intervals [count, default 1000]
    #[arg(long)]
    n_steps: Option<usize>,
    /// Level for the passage times [workload units]
    #[arg(long)]
    u: Option<f64>,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn flag_name(param: &str) -> String {
    match param {
        "drift" => "--c".to_string(),
        p => format!("--{}", p.replace('_', "-")),
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invalid(_) => 3,
            Failure::Lib(e) => match e {
                Error::TooRare { .. } => 2,
                Error::Synthesis(_) => 3,
                Error::Io { .. } | Error::Csv(_) => 4,
                _ => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Invalid(m) => m.clone(),
            Failure::Lib(Error::Domain { param, value, reason }) => {
                format!("{} = {value} is invalid: {reason}", flag_name(param))
            }
            Failure::Lib(e @ Error::NeedsEstimatedConstant(_)) => {
                format!("{e} (pass --pickands and --piterbarg, e.g. from `rfbm constants`)")
            }
            Failure::Lib(e) => e.to_string(),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Flat key/value view of a config file.
struct Config(Map<String, Value>);

impl Config {
    fn load(path: Option<&Path>) -> Outcome<Self> {
        let Some(path) = path else {
            return Ok(Config(Map::new()));
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(map)) => Ok(Config(map)),
            Ok(_) => Err(Failure::Usage(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => Err(Failure::Usage(format!("{}: {e}", path.display()))),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Outcome<Option<T>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Failure::Usage(format!("config key {key}: {e}"))),
        }
    }

    /// The flag if given, else the config value.
    fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Outcome<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Outcome<T> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    fn need<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Outcome<T> {
        self.pick(flag, key)?
            .ok_or_else(|| Failure::Usage(format!("missing required flag {} (or config key {key})", flag_name(key))))
    }
}

struct Context {
    config: Config,
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Context {
    fn seed(&self) -> Outcome<u64> {
        self.config.need(self.seed, "seed")
    }

    fn out_dir(&self) -> Outcome<PathBuf> {
        self.config.or(self.out.clone(), "out", PathBuf::from(DEFAULT_OUT))
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

/// Six significant digits.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

fn opt6(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), sig6)
}

fn model(ctx: &Context, flags: &ModelFlags) -> Outcome<ModelParams> {
    let c = &ctx.config;
    Ok(ModelParams::new(
        c.need(flags.hurst, "hurst")?,
        c.need(flags.gamma, "gamma")?,
        c.need(flags.c, "c")?,
    )?)
}

fn supplied_constants(ctx: &Context, flags: &ConstantFlags) -> Outcome<Option<ConstantPair>> {
    let c = &ctx.config;
    let h = c.pick(flags.pickands, "pickands")?;
    let p = c.pick(flags.piterbarg, "piterbarg")?;
    let est = |value: f64, se: f64| EstimateWithError {
        value,
        std_error: se,
        replicates: 0,
        method: EstimateMethod::MonteCarlo,
    };
    match (h, p) {
        (None, None) => Ok(None),
        (Some(h), Some(p)) => Ok(Some(ConstantPair {
            pickands: est(h, c.or(flags.pickands_se, "pickands_se", 0.0)?),
            piterbarg: est(p, c.or(flags.piterbarg_se, "piterbarg_se", 0.0)?),
        })),
        _ => Err(Failure::Usage("--pickands and --piterbarg must be given together".into())),
    }
}

fn write_json(path: &Path, value: &Value) -> Outcome<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::Lib(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn cmd_formulas(ctx: &Context, args: &FormulaArgs) -> Outcome<()> {
    let params = model(ctx, &args.model)?;
    let u = ctx.config.need(args.u, "u")?;
    let supplied = supplied_constants(ctx, &args.constants)?;
    let t0 = t_tilde0(&params);
    let a = a_scale(&params, u)?;
    let sm = sigma_max(&params);
    let ut = u_tilde(&params, u)?;
    ctx.say(format!("t_tilde0  = {}", sig6(t0)));
    ctx.say(format!("A(u)      = {}", sig6(a)));
    ctx.say(format!("A_const   = {}", sig6(a_const(&params))));
    ctx.say(format!("sigma_max = {}", sig6(sm)));
    ctx.say(format!("u_tilde   = {}", sig6(ut)));
    let mut out = json!({
        "model": params, "u": u, "t_tilde0": t0, "a_of_u": a, "a_const": a_const(&params),
        "sigma_max": sm, "u_tilde": ut,
    });
    if params.gamma > 0.0 && params.gamma < 1.0 {
        let approx = ruin_prob_approx(u, &params, supplied.as_ref())?;
        let c = &approx.constants;
        ctx.say(format!(
            "ruin_prob_approx = {}{} [H_2H = {} ({}), P = {} ({})]",
            sig6(approx.value),
            if approx.clamped { " (clamped)" } else { "" },
            sig6(c.pickands.value),
            provenance(&c.pickands),
            sig6(c.piterbarg.value),
            provenance(&c.piterbarg),
        ));
        out["ruin_prob_approx"] = json!(approx);
        if params.hurst == 0.5 {
            let reduced = ruin_prob_half_hurst(u, &params)?;
            ctx.say(format!("ruin_prob_reduced = {} [exp(-2cu)/(1-gamma)]", sig6(reduced)));
            out["ruin_prob_reduced"] = json!(reduced);
        }
    } else {
        ctx.say("ruin_prob_approx = - [needs 0 < gamma < 1]");
    }
    if let Some(dir) = ctx.out.as_ref() {
        write_json(&dir.join("formulas.json"), &out)?;
    }
    Ok(())
}

fn provenance(e: &EstimateWithError) -> &'static str {
    match e.method {
        EstimateMethod::ClosedForm => "closed-form",
        EstimateMethod::MonteCarlo => "estimated",
    }
}

/// Builds the experiment config: config file, then flags on top.
fn campaign_config(ctx: &Context, args: &CampaignArgs) -> Outcome<ExperimentConfig> {
    let mut v = Value::Object(ctx.config.0.clone());
    v.as_object_mut().unwrap().remove("out");
    let set = |v: &mut Value, path: &[&str], x: Value| {
        let mut cur = v;
        for key in &path[..path.len() - 1] {
            let obj = cur.as_object_mut().unwrap();
            cur = obj.entry(key.to_string()).or_insert_with(|| json!({}));
        }
        cur.as_object_mut().unwrap().insert(path[path.len() - 1].to_string(), x);
    };
    if let Some(h) = args.model.hurst {
        set(&mut v, &["model", "hurst"], json!(h));
    }
    if let Some(g) = args.model.gamma {
        set(&mut v, &["model", "gamma"], json!(g));
    }
    if let Some(c) = args.model.c {
        set(&mut v, &["model", "drift"], json!(c));
    }
    if let Some(l) = &args.levels {
        set(&mut v, &["levels"], json!(l));
    }
    if let Some(k) = args.horizon_factor {
        set(&mut v, &["horizon_factor"], json!(k));
    }
    if let Some(n) = args.steps_per_unit {
        set(&mut v, &["steps_per_unit"], json!(n));
    }
    if let Some(r) = args.replicates {
        set(&mut v, &["replicates"], json!(r));
    }
    if let Some(s) = ctx.seed {
        set(&mut v, &["seed"], json!(s));
    }
    if let Some(o) = &ctx.out {
        set(&mut v, &["output"], json!(o));
    }
    if let Some(pair) = supplied_constants(ctx, &args.constants)? {
        set(&mut v, &["constants"], json!(pair));
    }
    let model = v.get("model").cloned().unwrap_or(Value::Null);
    for (key, flag) in [("hurst", "--hurst"), ("gamma", "--gamma"), ("drift", "--c")] {
        if model.get(key).is_none() {
            return Err(Failure::Usage(format!("missing required flag {flag} (or config key model.{key})")));
        }
    }
    for (key, flag) in [("levels", "--levels"), ("replicates", "--replicates"), ("seed", "--seed")] {
        if v.get(key).is_none() {
            return Err(Failure::Usage(format!("missing required flag {flag} (or config key {key})")));
        }
    }
    let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Failure::Usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn campaign_out(ctx: &Context, cfg: &ExperimentConfig) -> PathBuf {
    ctx.out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn cmd_passage(ctx: &Context, args: &PassageArgs) -> Outcome<()> {
    let cfg = campaign_config(ctx, &args.campaign)?;
    let run = run_conditional_passage(&cfg)?;
    let dir = campaign_out(ctx, &cfg);
    let zero_timestamp = std::env::var_os("RFBM_ZERO_TIMESTAMP").is_some();
    write_report(
        &run,
        &dir,
        ReportOptions {
            samples: args.samples,
            zero_timestamp,
        },
    )?;
    for l in &run.levels {
        let s = l.summary();
        let d = &l.diagnostics;
        ctx.say(format!(
            "u={} accepted={}/{} ks_z1={} mean_z1={} sd_z1={} med_gap={} step/A={} late={}",
            sig6(s.u),
            s.accepted,
            s.n,
            opt6(s.ks_z1),
            opt6(s.mean_z1),
            opt6(s.sd_z1),
            opt6(s.med_gap),
            sig6(d.step_over_a),
            d.horizon_violations
        ));
    }
    ctx.say(format!("report written to {}", dir.display()));
    if run.invalid() {
        return Err(Failure::Invalid(
            "campaign invalid: more than 1% of ruined paths exceed the level late in the horizon; raise --horizon-factor"
                .into(),
        ));
    }
    Ok(())
}

fn cmd_ruin_freq(ctx: &Context, args: &CampaignArgs) -> Outcome<()> {
    let cfg = campaign_config(ctx, args)?;
    let rows = ruin_frequency_experiment(&cfg)?;
    let dir = campaign_out(ctx, &cfg);
    create_dir(&dir)?;
    let path = dir.join("ruin_freq.csv");
    let io = |e: csv::Error| Failure::Lib(Error::Csv(e));
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    for r in &rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    write_json(&dir.join("ruin_freq.json"), &json!({ "config": cfg, "rows": rows }))?;
    ctx.say("u empirical_p std_error predicted_p ratio");
    for r in &rows {
        ctx.say(format!(
            "{} {} {} {} {}",
            sig6(r.u),
            sig6(r.empirical_p),
            sig6(r.std_error),
            sig6(r.predicted_p),
            sig6(r.ratio)
        ));
    }
    Ok(())
}

fn cmd_constants(ctx: &Context, args: &ConstantArgs) -> Outcome<()> {
    let c = &ctx.config;
    let alpha: f64 = c.need(args.alpha, "alpha")?;
    let a: Option<f64> = c.pick(args.a, "a")?;
    let seed = ctx.seed()?;
    let mut out = json!({ "alpha": alpha, "seed": seed });
    match a {
        None => {
            let (default_ladder, default_mc) = default_limit_settings(alpha, seed);
            let ladder = c.or(args.ladder.clone(), "ladder", default_ladder)?;
            let mc = McSettings {
                replicates: c.or(args.replicates, "replicates", default_mc.replicates)?,
                n_steps: c.or(args.steps, "steps", default_mc.n_steps)?,
                ..default_mc
            };
            let closed = pickands_closed(alpha);
            let est = pickands_limit_estimate(alpha, &ladder, &mc)?;
            out["kind"] = json!("pickands");
            if let Some(v) = closed {
                out["closed_form"] = json!(v);
            }
            out["estimate"] = json!(est.estimate);
            out["ladder"] = json!(est.ladder);
            out["details"] = json!(est);
            summary(ctx, &format!("H_{}", sig6(alpha)), closed, &est.estimate);
        }
        Some(a) => {
            let default_mc = default_piterbarg_settings(seed);
            let mc = McSettings {
                replicates: c.or(args.replicates, "replicates", default_mc.replicates)?,
                n_steps: c.or(args.steps, "steps", default_mc.n_steps)?,
                ..default_mc
            };
            let horizon = c.or(args.horizon, "horizon", default_piterbarg_horizon(alpha, a))?;
            let closed = piterbarg_closed(alpha, a);
            let est = piterbarg_limit_estimate(alpha, a, horizon, &mc)?;
            out["kind"] = json!("piterbarg");
            out["a"] = json!(a);
            if let Some(v) = closed {
                out["closed_form"] = json!(v);
            }
            out["estimate"] = json!(est.extrapolated);
            out["details"] = json!(est);
            summary(ctx, &format!("P_{}^{}", sig6(alpha), sig6(a)), closed, &est.extrapolated);
        }
    }
    write_json(&ctx.out_dir()?.join("constants.json"), &out)?;
    if !ctx.quiet {
        println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?);
    }
    Ok(())
}

fn summary(ctx: &Context, name: &str, closed: Option<f64>, est: &EstimateWithError) {
    let within = closed.map(|v| (est.value - v).abs() / est.std_error);
    ctx.say(format!(
        "{name}: closed_form={} estimate={} std_error={}{}",
        opt6(closed),
        sig6(est.value),
        sig6(est.std_error),
        within.map_or(String::new(), |z| format!(" |diff|/SE={}", sig6(z)))
    ));
}

fn print_rows(ctx: &Context, rows: &[VerifyRow]) {
    ctx.say("u empirical_p std_error predicted_p ratio ratio_se coarse_p");
    for r in rows {
        ctx.say(format!(
            "{} {} {} {} {} {} {}{}",
            sig6(r.u),
            sig6(r.empirical_p),
            sig6(r.std_error),
            sig6(r.predicted_p),
            sig6(r.ratio),
            sig6(r.ratio_se),
            sig6(r.coarse_p),
            if r.infeasible { " (infeasible)" } else { "" }
        ));
    }
}

fn field_mc(ctx: &Context, replicates: Option<u64>, cell_points: Option<f64>, budget: Option<usize>) -> Outcome<FieldMc> {
    let c = &ctx.config;
    Ok(FieldMc {
        replicates: c.or(replicates, "replicates", 200_000)?,
        seed: ctx.seed()?,
        budget: c.or(budget, "budget", DEFAULT_POINT_BUDGET)?,
        cell_points: c.or(cell_points, "cell_points", DEFAULT_CELL_POINTS)?,
    })
}

fn cmd_thm21(ctx: &Context, args: &Thm21Args) -> Outcome<()> {
    let c = &ctx.config;
    let spec = FieldSpec::new(
        c.or(args.beta, "beta", 2.0)?,
        c.or(args.b1, "b1", 1.0)?,
        c.or(args.b2, "b2", 1.0)?,
        c.or(args.b3, "b3", 0.0)?,
        c.or(args.a1, "a1", 1.0)?,
        c.or(args.a2, "a2", 1.0)?,
        c.or(args.t0, "t0", 1.0)?,
    )?;
    let x: Option<f64> = c.pick(args.x, "x")?;
    let large_x = args.large_x || c.get::<bool>("large_x")?.unwrap_or(false);
    if large_x && x.is_some() {
        return Err(Failure::Usage("--x conflicts with --large-x".into()));
    }
    let offset = if large_x {
        RegionOffset::LogLevel
    } else {
        RegionOffset::Fixed(x.unwrap_or(0.0))
    };
    let levels = c.or(args.levels.clone(), "levels", vec![2.5, 3.0, 3.5])?;
    let supplied = supplied_constants(ctx, &args.constants)?;
    let mc = field_mc(ctx, args.replicates, args.cell_points, args.budget)?;
    let rows = verify_thm21(&spec, offset, &levels, large_x, supplied.as_ref(), &mc)?;
    let dir = ctx.out_dir()?;
    create_dir(&dir)?;
    write_rows(&dir.join("thm21.json"), &rows)?;
    print_rows(ctx, &rows);
    Ok(())
}

fn cmd_piterbarg(ctx: &Context, args: &PiterbargArgs) -> Outcome<()> {
    let c = &ctx.config;
    let threshold = match c.or(args.threshold, "threshold", ThresholdArg::Level)? {
        ThresholdArg::Level => Threshold::Level,
        ThresholdArg::Shifted => Threshold::Shifted,
    };
    let cfg = PiterbargLemma {
        alpha1: c.or(args.alpha1, "alpha1", 1.0)?,
        alpha2: c.or(args.alpha2, "alpha2", 1.0)?,
        b1: c.or(args.b1, "b1", 0.5)?,
        b2: c.or(args.b2, "b2", 1.0)?,
        s_len: c.or(args.s_len, "s_len", 2.0)?,
        t1: c.or(args.t1, "t1", 0.0)?,
        t2: c.or(args.t2, "t2", 2.0)?,
        n_s: c.or(args.n_s, "n_s", 16)?,
        n_t: c.or(args.n_t, "n_t", 16)?,
        threshold,
    };
    cfg.validate()?;
    let levels = c.or(args.levels.clone(), "levels", vec![3.0, 3.5, 4.0])?;
    let mc = field_mc(ctx, args.replicates, None, None)?;
    let constants = lemma_constants(&cfg, c.or(args.constant_replicates, "constant_replicates", 100_000)?, mc.seed ^ 0xc0)?;
    if constants.pickands_substituted {
        ctx.say("note: b1 = 0, so the s-factor is the Pickands constant H_alpha1[0,S]");
    }
    let rows = verify_piterbarg_lemma(&cfg, &levels, &constants, &mc)?;
    let dir = ctx.out_dir()?;
    write_json(
        &dir.join("piterbarg.json"),
        &json!({ "config": cfg, "constants": constants, "pickands_substituted": constants.pickands_substituted, "rows": rows }),
    )?;
    print_rows(ctx, &rows);
    Ok(())
}

fn cmd_sample_path(ctx: &Context, args: &SamplePathArgs) -> Outcome<()> {
    let params = model(ctx, &args.model)?;
    let c = &ctx.config;
    let grid = Grid::new(c.or(args.t_max, "t_max", 10.0)?, c.or(args.n_steps, "n_steps", 1000)?)?;
    let x = sample_fbm(params.hurst, grid, ctx.seed()?)?;
    let mut y = x.clone();
    apply_drift(&mut y.values, &grid, params.drift);
    let w = reflect(&y, params.gamma)?;
    let dir = ctx.out_dir()?;
    create_dir(&dir)?;
    let path = dir.join("path.csv");
    let io = |e: csv::Error| Failure::Lib(Error::Csv(e));
    let mut wr = csv::Writer::from_path(&path).map_err(io)?;
    wr.write_record(["t", "x", "y", "w"]).map_err(io)?;
    for (i, t) in grid.times().enumerate() {
        wr.write_record([t, x.values[i], y.values[i], w.values[i]].map(|v| v.to_string()))
            .map_err(io)?;
    }
    wr.flush().map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    ctx.say(format!("path written to {}", path.display()));
    if let Some(u) = c.pick(args.u, "u")? {
        let r = passage_times(&w, u)?;
        ctx.say(format!(
            "u={} ruined={} tau1={} tau2={}",
            sig6(u),
            r.ruined,
            opt6(r.tau1),
            opt6(r.tau2)
        ));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome<()> {
    let ctx = Context {
        config: Config::load(cli.global.config.as_deref())?,
        seed: cli.global.seed,
        out: cli.global.out.clone(),
        quiet: cli.global.quiet,
    };
    let threads = ctx.config.pick(cli.global.threads, "threads")?;
    with_threads(threads, || match &cli.command {
        Command::Formulas(a) => cmd_formulas(&ctx, a),
        Command::Passage(a) => cmd_passage(&ctx, a),
        Command::RuinFreq(a) => cmd_ruin_freq(&ctx, a),
        Command::Constants(a) => cmd_constants(&ctx, a),
        Command::Field(FieldCommand::VerifyThm21(a)) => cmd_thm21(&ctx, a),
        Command::Field(FieldCommand::VerifyPiterbarg(a)) => cmd_piterbarg(&ctx, a),
        Command::SamplePath(a) => cmd_sample_path(&ctx, a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.global.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
