//! Command-line front end: flag and config-file parsing, subcommand dispatch
//! and output files.
//!
//! Exit codes: 0 success, 1 domain or runtime error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::LevelFilter;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::asymptotics::{gamma_matrices, identifiability_scan, invariant_density_1d, limit_covariance, InvariantMeasure};
use crate::error::QlaError;
use crate::estimators::{bayes_adaptive, qmle, BayesConfig, PriorDensity, QmleConfig};
use crate::experiments::{
    moment_check, normality_check, relative_bands, run_monte_carlo, theorem1_check, write_outputs, McConfig, PilotMode,
    QMLE_LABEL,
};
use crate::loss::{check_a5, check_c1, validate_loss_class, C1Grid, LossFunction};
use crate::models::{resolve_model, DiffusionModel, PolynomialSpec, TrueParameter};
use crate::qla::Scaling;
use crate::simulator::{check_gamma, simulate_observations, ObservationSet, PathConfig};

const DEFAULT_OUTPUT_DIR: &str = "qla-out";

#[derive(Debug, Parser)]
#[command(name = "qla", version, about = "Adaptive Bayes-type and quasi-maximum likelihood estimation for ergodic diffusions")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an observation record and write it as CSV.
    Simulate(SimulateArgs),
    /// QMLE and adaptive Bayes estimates from a CSV record.
    Estimate(EstimateArgs),
    /// Monte Carlo experiment.
    Mc(McArgs),
    /// Information matrices, limit covariance and identifiability scan.
    Info(InfoArgs),
    /// Loss-class property checks.
    ValidateLoss(ValidateLossArgs),
}

#[derive(Debug, Args)]
struct TruthArgs {
    #[arg(long, value_delimiter = ',')]
    theta1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    theta2: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    truth: TruthArgs,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    loss1: Option<String>,
    #[arg(long)]
    loss2: Option<String>,
    /// Prior for both stages: `uniform` or `gaussian:<center>,<sd>`.
    #[arg(long)]
    prior: Option<String>,
    /// Stage-1 pilot θ₂⁰ (defaults to the box center).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pilot: Option<Vec<f64>>,
    /// Use the model's true θ₂ as pilot.
    #[arg(long)]
    oracle_pilot: bool,
    /// Final quadrature nodes per axis.
    #[arg(long)]
    grid_nodes: Option<usize>,
    #[command(flatten)]
    truth: TruthArgs,
}

#[derive(Debug, Args)]
struct McArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// oracle | fixed | both
    #[arg(long)]
    pilot: Option<String>,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long)]
    model: Option<String>,
    /// analytic (scalar models) | empirical
    #[arg(long)]
    measure: Option<String>,
    /// Scan points per parameter axis.
    #[arg(long)]
    scan_points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    truth: TruthArgs,
}

#[derive(Debug, Args)]
struct ValidateLossArgs {
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    r0: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    /// Radius `M` for the A5 search.
    #[arg(long)]
    a5_m: Option<f64>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TruthSection {
    theta1: Option<Vec<f64>>,
    theta2: Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateSection {
    model: Option<String>,
    n: Option<usize>,
    gamma: Option<f64>,
    substeps: Option<usize>,
    seed: Option<u64>,
    truth: TruthSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EstimateSection {
    model: Option<String>,
    data: Option<PathBuf>,
    loss1: Option<String>,
    loss2: Option<String>,
    prior: Option<String>,
    pilot: Option<Vec<f64>>,
    oracle_pilot: Option<bool>,
    grid_nodes: Option<usize>,
    truth: TruthSection,
    bayes: Option<BayesConfig>,
    qmle: Option<QmleConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InfoSection {
    model: Option<String>,
    measure: Option<String>,
    scan_points: Option<usize>,
    seed: Option<u64>,
    truth: TruthSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ValidateLossSection {
    loss: Option<String>,
    eta: Option<f64>,
    r0: Option<f64>,
    dim: Option<usize>,
    a5_m: Option<f64>,
    probes: Option<usize>,
    seed: Option<u64>,
}

/// Layout of the config file: shared keys plus one section per subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    output_dir: Option<PathBuf>,
    /// off | error | warn | info | debug | trace
    log_level: Option<String>,
    custom_model: Option<PolynomialSpec>,
    simulate: SimulateSection,
    estimate: EstimateSection,
    mc: Option<McConfig>,
    info: InfoSection,
    validate_loss: ValidateLossSection,
}

/// Bad flags, bad config file or missing required values (exit code 2).
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<QlaError> for UsageError {
    fn from(e: QlaError) -> Self {
        UsageError(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelChoice {
    pub name: String,
    pub custom: Option<PolynomialSpec>,
    pub truth: TrueParameter,
}

impl ModelChoice {
    fn build(&self) -> crate::Result<DiffusionModel> {
        Ok(resolve_model(&self.name, self.custom.as_ref())?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateJob {
    pub model: ModelChoice,
    pub n: usize,
    pub gamma: f64,
    pub h: f64,
    pub substeps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateJob {
    pub model: ModelChoice,
    pub data: PathBuf,
    pub loss1: String,
    pub loss2: String,
    pub prior: String,
    pub pilot: Vec<f64>,
    pub oracle_pilot: bool,
    pub bayes: BayesConfig,
    pub qmle: QmleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoJob {
    pub model: ModelChoice,
    pub analytic: bool,
    pub scan_points: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateLossJob {
    pub loss: String,
    pub dim: usize,
    pub eta: f64,
    pub r0: f64,
    pub a5_m: f64,
    pub probes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Job {
    Simulate(SimulateJob),
    Estimate(EstimateJob),
    Mc(McConfig),
    Info(InfoJob),
    ValidateLoss(ValidateLossJob),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(serialize_with = "ser_level")]
    pub log_level: LevelFilter,
    pub job: Job,
}

fn ser_level<S: serde::Serializer>(l: &LevelFilter, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&l.to_string().to_lowercase())
}

fn read_file_config(path: &Path) -> Result<FileConfig, UsageError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))
}

fn model_choice(
    name: Option<String>,
    custom: Option<PolynomialSpec>,
    flags: &TruthArgs,
    file: &TruthSection,
) -> Result<ModelChoice, UsageError> {
    let name = name.unwrap_or_else(|| "OU".to_string());
    let (model, mut truth) = resolve_model(&name, custom.as_ref())?;
    if let Some(t) = flags.theta1.clone().or_else(|| file.theta1.clone()) {
        truth.theta1_star = t;
    }
    if let Some(t) = flags.theta2.clone().or_else(|| file.theta2.clone()) {
        truth.theta2_star = t;
    }
    if let Some(x) = flags.x0.clone().or_else(|| file.x0.clone()) {
        truth.x0 = x;
    }
    truth.validate(&model)?;
    Ok(ModelChoice { name, custom, truth })
}

fn required<T>(value: Option<T>, field: &str) -> Result<T, UsageError> {
    value.ok_or_else(|| UsageError(format!("missing required field `{field}`")))
}

fn level_from(verbose: u8, file: Option<&str>) -> Result<LevelFilter, UsageError> {
    if verbose > 0 {
        return Ok(match verbose {
            1 => LevelFilter::Info,
            2 => LevelFilter::Debug,
            _ => LevelFilter::Trace,
        });
    }
    match file {
        None => Ok(LevelFilter::Warn),
        Some(s) => s
            .parse()
            .map_err(|_| UsageError(format!("unknown log_level `{s}`"))),
    }
}

/// Parses flags (and the config file they name) into a [`RunConfig`].
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| UsageError(e.to_string()))?;
    from_cli(cli)
}

fn from_cli(cli: Cli) -> Result<RunConfig, UsageError> {
    let file = match &cli.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let output_dir = cli
        .output_dir
        .clone()
        .or(file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let log_level = level_from(cli.verbose, file.log_level.as_deref())?;
    let custom = file.custom_model.clone();
    let job = match cli.command {
        Command::Simulate(a) => {
            let s = &file.simulate;
            let model = model_choice(a.model.or(s.model.clone()), custom, &a.truth, &s.truth)?;
            let n = required(a.n.or(s.n), "n")?;
            let gamma = a.gamma.or(s.gamma).unwrap_or(0.6);
            check_gamma(gamma)?;
            let substeps = a.substeps.or(s.substeps).unwrap_or(10);
            let seed = a.seed.or(s.seed).unwrap_or(1);
            let pc = PathConfig::rate_regime(n, gamma, substeps, seed)?;
            Job::Simulate(SimulateJob {
                model,
                n,
                gamma,
                h: pc.h(),
                substeps,
                seed,
            })
        }
        Command::Estimate(a) => {
            let s = &file.estimate;
            let model = model_choice(a.model.or(s.model.clone()), custom, &a.truth, &s.truth)?;
            let built = model.build()?;
            let data = required(a.data.or(s.data.clone()), "data")?;
            let loss1 = a.loss1.or(s.loss1.clone()).unwrap_or_else(|| "power:2".into());
            let loss2 = a.loss2.or(s.loss2.clone()).unwrap_or_else(|| "power:2".into());
            LossFunction::parse(&loss1, built.d1())?;
            LossFunction::parse(&loss2, built.d2())?;
            let prior = a.prior.or(s.prior.clone()).unwrap_or_else(|| "uniform".into());
            PriorDensity::parse(&prior, built.theta1_box().clone())?;
            PriorDensity::parse(&prior, built.theta2_box().clone())?;
            let oracle_pilot = a.oracle_pilot || s.oracle_pilot.unwrap_or(false);
            let pilot = if oracle_pilot {
                model.truth.theta2_star.clone()
            } else {
                a.pilot.or(s.pilot.clone()).unwrap_or_else(|| built.theta2_box().center())
            };
            if pilot.len() != built.d2() || !built.theta2_box().contains_closed(&pilot) {
                return Err(UsageError(format!(
                    "pilot {pilot:?} must lie in {:?}",
                    built.theta2_box()
                )));
            }
            let mut bayes = s.bayes.clone().unwrap_or_default();
            if let Some(g) = a.grid_nodes.or(s.grid_nodes) {
                if g == 0 {
                    return Err(UsageError("grid_nodes must be positive".into()));
                }
                bayes.nodes_1d = g;
                bayes.nodes_2d = g;
            }
            Job::Estimate(EstimateJob {
                model,
                data,
                loss1,
                loss2,
                prior,
                pilot,
                oracle_pilot,
                bayes,
                qmle: s.qmle.clone().unwrap_or_default(),
            })
        }
        Command::Mc(a) => {
            let mut mc = file.mc.clone().unwrap_or_default();
            if mc.custom_model.is_none() {
                mc.custom_model = custom;
            }
            if let Some(m) = a.model {
                mc.model = m;
            }
            if let Some(g) = a.gamma {
                mc.gamma = g;
            }
            if let Some(n) = a.n_list {
                mc.n_list = n;
            }
            if let Some(r) = a.replicates {
                mc.replicates = r;
            }
            if let Some(s) = a.seed {
                mc.seed = s;
            }
            if let Some(p) = a.pilot {
                mc.pilot = match p.as_str() {
                    "oracle" => PilotMode::Oracle,
                    "fixed" => PilotMode::Fixed,
                    "both" => PilotMode::Both,
                    _ => return Err(UsageError(format!("unknown pilot mode `{p}` (oracle | fixed | both)"))),
                };
            }
            mc.validate()?;
            Job::Mc(mc)
        }
        Command::Info(a) => {
            let s = &file.info;
            let model = model_choice(a.model.or(s.model.clone()), custom, &a.truth, &s.truth)?;
            let built = model.build()?;
            let analytic = match a.measure.or(s.measure.clone()).as_deref() {
                None => built.state_dim() == 1,
                Some("analytic") if built.state_dim() == 1 => true,
                Some("analytic") => return Err(UsageError("analytic measure needs a scalar state".into())),
                Some("empirical") => false,
                Some(other) => return Err(UsageError(format!("unknown measure `{other}` (analytic | empirical)"))),
            };
            let scan_points = a.scan_points.or(s.scan_points).unwrap_or(41);
            if scan_points < 3 {
                return Err(UsageError("scan_points must be at least 3".into()));
            }
            Job::Info(InfoJob {
                model,
                analytic,
                scan_points,
                seed: a.seed.or(s.seed).unwrap_or(1),
            })
        }
        Command::ValidateLoss(a) => {
            let s = &file.validate_loss;
            let loss = required(a.loss.or(s.loss.clone()), "loss")?;
            let dim = a.dim.or(s.dim).unwrap_or(1);
            LossFunction::parse(&loss, dim)?;
            Job::ValidateLoss(ValidateLossJob {
                loss,
                dim,
                eta: a.eta.or(s.eta).unwrap_or(0.5),
                r0: a.r0.or(s.r0).unwrap_or(4.0),
                a5_m: a.a5_m.or(s.a5_m).unwrap_or(1.0),
                probes: a.probes.or(s.probes).unwrap_or(2000),
                seed: a.seed.or(s.seed).unwrap_or(1),
            })
        }
    };
    Ok(RunConfig {
        output_dir,
        log_level,
        job,
    })
}

fn to_json<T: Serialize>(v: &T) -> crate::Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| QlaError::Io(e.to_string()))
}

fn write_file(dir: &Path, name: &str, text: &str) -> crate::Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| QlaError::Io(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| QlaError::Io(format!("{}: {e}", p.display())))?;
    Ok(p)
}

fn write_metadata(cfg: &RunConfig, started: &str) -> crate::Result<()> {
    let meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "started": started,
        "finished": chrono::Utc::now().to_rfc3339(),
        "threads": rayon::current_num_threads(),
        "config": cfg,
    });
    write_file(&cfg.output_dir, "metadata.json", &to_json(&meta)?)?;
    Ok(())
}

/// Runs the selected pipeline and writes its outputs.
pub fn dispatch(cfg: &RunConfig) -> crate::Result<()> {
    let started = chrono::Utc::now().to_rfc3339();
    match &cfg.job {
        Job::Simulate(job) => {
            let model = job.model.build()?;
            let pc = PathConfig::rate_regime(job.n, job.gamma, job.substeps, job.seed)?;
            let obs = simulate_observations(&model, &job.model.truth, &pc)?;
            let path = write_file(&cfg.output_dir, "observations.csv", &obs.to_csv())?;
            write_metadata(cfg, &started)?;
            println!(
                "{}",
                to_json(&json!({"model": job.model.name, "n": job.n, "h": job.h, "seed": job.seed, "path": path}))?
            );
        }
        Job::Estimate(job) => {
            let model = job.model.build()?;
            let obs = ObservationSet::read_csv(&job.data)?;
            if obs.dim() != model.state_dim() {
                return Err(QlaError::InvalidArgument(format!(
                    "{} has state dimension {}, model `{}` expects {}",
                    job.data.display(),
                    obs.dim(),
                    job.model.name,
                    model.state_dim()
                )));
            }
            let q = qmle(&model, &obs, &job.qmle, None)?;
            let w1 = LossFunction::parse(&job.loss1, model.d1())?;
            let w2 = LossFunction::parse(&job.loss2, model.d2())?;
            let p1 = PriorDensity::parse(&job.prior, model.theta1_box().clone())?;
            let p2 = PriorDensity::parse(&job.prior, model.theta2_box().clone())?;
            let scaling = Scaling::for_obs(&obs);
            let b = bayes_adaptive(&model, &obs, [&w1, &w2], [&p1, &p2], &job.pilot, &job.bayes, &scaling, None)?;
            let out = json!({
                "theta_hat": {"theta1": q.theta_hat1, "theta2": q.theta_hat2},
                "theta_tilde": {"theta1": b.theta_tilde1, "theta2": b.theta_tilde2},
                "diagnostics": {
                    "n": obs.n(),
                    "h": obs.h(),
                    "contrast_at_max": q.contrast_at_max,
                    "qmle_starts_converged": q.starts_converged,
                    "losses": b.loss_ids,
                    "pilot": b.pilot,
                    "oracle_pilot": job.oracle_pilot,
                    "bayes_objective": b.objective,
                    "tie_broken": b.tie_broken,
                    "warnings": b.warnings,
                },
            });
            let text = to_json(&out)?;
            write_file(&cfg.output_dir, "estimate.json", &text)?;
            write_metadata(cfg, &started)?;
            println!("{text}");
        }
        Job::Mc(mc) => {
            let report = run_monte_carlo(mc)?;
            write_outputs(&report, &cfg.output_dir)?;
            let mut checks = Vec::new();
            if report.config.n_list.len() >= 2 && report.primary.len() >= 2 {
                checks.push(theorem1_check(&report)?);
            }
            let largest = report.largest_n();
            let lv = report.limit_variance();
            let bands = relative_bands(&lv, mc.thresholds.variance_band);
            for name in [report.primary[0].as_str(), QMLE_LABEL] {
                let cell = report.cell(largest, name).expect("cell exists");
                if cell.samples.len() >= 200 {
                    let mut c = normality_check(cell, &lv, &bands)?;
                    c.name = format!("normality[{name}]");
                    checks.push(c);
                }
            }
            let mut m = moment_check(&report, &report.primary[0])?;
            m.name = format!("moments[{}]", report.primary[0]);
            checks.push(m);
            write_file(&cfg.output_dir, "checks.json", &to_json(&checks)?)?;
            write_metadata(cfg, &started)?;
            if !report.valid {
                println!("WARNING report invalid: more than 5% failed replicates in some cell");
            }
            for c in &checks {
                println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
                if !c.passed {
                    println!("{}", c.failures());
                }
            }
        }
        Job::Info(job) => {
            let model = job.model.build()?;
            let truth = &job.model.truth;
            let measure = if job.analytic {
                invariant_density_1d(&model, truth)?
            } else {
                InvariantMeasure::from_long_path(&model, truth, 5000.0, 0.01, job.seed)?
            };
            let info = gamma_matrices(&model, truth, &measure)?;
            let cov = limit_covariance(&info)?;
            let scan = identifiability_scan(&model, truth, &measure, job.scan_points)?;
            let max_y = |pts: &[crate::asymptotics::ScanPoint]| pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            let out = json!({
                "model": job.model.name,
                "truth": truth,
                "measure": if job.analytic { "analytic" } else { "empirical" },
                "gamma1": info.gamma1,
                "gamma2": info.gamma2,
                "covariance": cov,
                "scan": {
                    "points_per_axis": job.scan_points,
                    "max_y1": max_y(&scan.y1),
                    "max_y2": max_y(&scan.y2),
                    "max_y1_off_truth": scan.max_y1_off_truth,
                    "max_y2_off_truth": scan.max_y2_off_truth,
                },
                "chi1": scan.chi1,
                "chi2": scan.chi2,
            });
            println!("{}", to_json(&out)?);
        }
        Job::ValidateLoss(job) => {
            let w = LossFunction::parse(&job.loss, job.dim)?;
            let report = validate_loss_class(&w, w.class_exponent(), job.probes, job.seed)?;
            let c1 = check_c1(&w, job.eta, job.r0, &C1Grid::default())?;
            let a5 = match check_a5(&w, job.a5_m) {
                Ok(mp) => json!({"passed": true, "m": job.a5_m, "m_prime": mp}),
                Err(e) => json!({"passed": false, "m": job.a5_m, "error": e.to_string()}),
            };
            let all = report.all_passed() && c1.holds && a5["passed"] == json!(true);
            let out = json!({
                "loss": w.id(),
                "all_passed": all,
                "properties": report,
                "c1": {"eta": job.eta, "r0": job.r0, "report": c1},
                "a5": a5,
            });
            println!("{}", to_json(&out)?);
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), UsageError> {
    if let Ok(v) = std::env::var("QLA_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| UsageError(format!("QLA_THREADS must be a positive integer, got `{v}`")))?;
        // a pool that already exists (repeated in-process runs) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Full command-line entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match configure_threads().and_then(|_| from_cli(cli)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("usage error: {e}");
            return 2;
        }
    };
    let _ = env_logger::Builder::new().filter_level(cfg.log_level).try_init();
    match dispatch(&cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_flags() {
        let cfg = parse_config(["qla", "simulate", "--model", "OU", "--n", "1000", "--gamma", "0.6", "--seed", "7"]).unwrap();
        match cfg.job {
            Job::Simulate(j) => {
                assert_eq!(j.h, 1000f64.powf(-0.6));
                assert_eq!((j.n, j.seed), (1000, 7));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mc_gamma_rejected() {
        let e = parse_config(["qla", "mc", "--gamma", "0.4"]).unwrap_err();
        assert!(e.0.contains("gamma must be in (0.5, 1)"), "{e}");
    }

    #[test]
    fn unknown_key_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[simulate]\nmodle = \"OU\"\n").unwrap();
        let e = parse_config(["qla", "--config", p.to_str().unwrap(), "simulate", "--n", "10"]).unwrap_err();
        assert!(e.0.contains("modle"), "{e}");
        std::fs::write(&p, "[simulate]\nn = 10\nseed = [\n").unwrap();
        let e = parse_config(["qla", "--config", p.to_str().unwrap(), "simulate"]).unwrap_err();
        assert!(e.0.contains("line"), "{e}");
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[simulate]\nn = 10\nseed = 3\n").unwrap();
        let cfg = parse_config(["qla", "--config", p.to_str().unwrap(), "simulate", "--seed", "9"]).unwrap();
        match cfg.job {
            Job::Simulate(j) => assert_eq!((j.n, j.seed), (10, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_required_field() {
        let e = parse_config(["qla", "estimate"]).unwrap_err();
        assert!(e.0.contains("`data`"), "{e}");
        let e = parse_config(["qla", "simulate"]).unwrap_err();
        assert!(e.0.contains("`n`"), "{e}");
    }

    #[test]
    fn custom_model_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(
            &p,
            "[custom_model]\nname = \"cubic\"\ndrift = [0.0, 1.0, 0.0, 1.0]\ndiff = [2.0, 1.0]\n[simulate]\nmodel = \"cubic\"\nn = 100\n",
        )
        .unwrap();
        let cfg = parse_config(["qla", "--config", p.to_str().unwrap(), "simulate"]).unwrap();
        match cfg.job {
            Job::Simulate(j) => assert_eq!(j.model.truth.theta1_star, vec![2.6]),
            other => panic!("{other:?}"),
        }
    }
}
