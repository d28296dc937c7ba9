//! Batch front end behind the `sfde` binary.
//!
//! Every command loads and validates a JSON run config, applies command-line
//! overrides, computes, and writes one report (CSV or JSON) to stdout or
//! `--output`. Reports depend only on the config and the flags, so reruns are
//! byte-identical whatever `--threads` is.
//!
//! Exit codes: `0` success, `1` other failure, `2` the positivity gate
//! fails, `3` the config is invalid, `4` the Monte Carlo estimate is more
//! than four standard errors from the closed form.

pub mod config;
pub mod output;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::model::{HypothesisReport, ModelError};
use crate::simulation::{
    mc_human_capital_poisson, simulate_income, McEstimate, Measure, SimConfig, SimError,
};
use crate::valuation::{
    euler_discounted_value, human_capital_poisson, laplace_check, mean_path, LaplaceOptions, ValuationError,
};
use config::{Loaded, MeasureName, RunConfig, SchemaError};
use output::{num, sci, sci_opt, to_csv, to_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_GATE: i32 = 2;
pub const EXIT_SCHEMA: i32 = 3;
pub const EXIT_Z_BREACH: i32 = 4;

/// `|z|` above this fails `mc-check`.
pub const Z_LIMIT: f64 = 4.0;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_PATHS: usize = 10_000;
const DEFAULT_MEAN_HORIZON: f64 = 10.0;
const DEFAULT_DUMP_PATHS: usize = 8;
const DEFAULT_GRID_POINTS: usize = 101;

#[derive(Debug, Parser)]
#[command(name = "sfde", version, about = "Human capital under delayed income dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo path count (antithetic pairs count twice).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Time step in years.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Horizon in years; Monte Carlo and Laplace checks pick it from the tail
    /// bound when absent.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Poisson exit intensity.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form human capital and its decomposition.
    Price,
    /// Monte Carlo estimate against the closed form.
    McCheck {
        #[arg(long, value_enum)]
        measure: Option<MeasureArg>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        antithetic: Option<bool>,
        /// Also write simulated paths `(path, t, X0, xi)` as CSV.
        #[arg(long, value_name = "PATH")]
        dump: Option<PathBuf>,
        #[arg(long)]
        dump_paths: Option<usize>,
    },
    /// `K(λ)` on a grid, with the root `λ₀` flagged.
    Spectrum {
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        lambda: Option<Vec<f64>>,
    },
    /// Deterministic mean path `t, M0`.
    MeanPath,
    /// Laplace transform of the mean path against the resolvent formula.
    LaplaceCheck {
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MeasureArg {
    Physical,
    RiskNeutral,
}

#[derive(Debug)]
pub enum CliError {
    Schema(SchemaError),
    Gate(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => EXIT_SCHEMA,
            CliError::Gate(_) => EXIT_GATE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(e) => write!(f, "{e}"),
            CliError::Gate(msg) => write!(f, "hypothesis gate failed: {msg}"),
            CliError::Failure(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        CliError::Schema(e)
    }
}

impl From<ValuationError> for CliError {
    fn from(e: ValuationError) -> Self {
        match e {
            ValuationError::Hypothesis(r) => gate(&r),
            ValuationError::Model(ModelError::SignedDelayMeasure) => CliError::Gate(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Valuation(v) => v.into(),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        ValuationError::from(e).into()
    }
}

fn gate(r: &HypothesisReport) -> CliError {
    CliError::Gate(r.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failure(format!("{}: {e}", path.display()))
}

/// A finished command: the report and the exit code to return.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub exit_code: i32,
}

impl Report {
    fn ok(text: String) -> Self {
        Self { text, exit_code: EXIT_OK }
    }
}

/// Parses arguments, runs the command and writes the report. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let report = match cli.common.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Failure(e.to_string()))?;
            pool.install(|| run(cli))?
        }
        None => run(cli)?,
    };
    match &cli.common.output {
        Some(path) => std::fs::write(path, &report.text).map_err(|e| io_err(path, e))?,
        None => print!("{}", report.text),
    }
    Ok(report.exit_code)
}

/// Runs a parsed command and returns its report without writing it.
pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let loaded = load(cli)?;
    match &cli.command {
        Command::Price => price(&loaded),
        Command::McCheck { dump, .. } => mc_check(&loaded, dump.as_deref()),
        Command::Spectrum { .. } => spectrum(&loaded),
        Command::MeanPath => mean_path_cmd(&loaded),
        Command::LaplaceCheck { .. } => laplace_cmd(&loaded),
    }
}

/// Reads the config, folds command-line flags into its `options` and
/// validates the result.
fn load(cli: &Cli) -> Result<Loaded, CliError> {
    let path = cli
        .common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Failure("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut cfg = RunConfig::from_json(&text)?;

    let c = &cli.common;
    let o = &mut cfg.options;
    o.seed = c.seed.or(o.seed);
    o.paths = c.paths.or(o.paths);
    o.dt = c.dt.or(o.dt);
    o.horizon = c.horizon.or(o.horizon);
    o.delta = c.delta.or(o.delta);
    match &cli.command {
        Command::McCheck {
            measure,
            antithetic,
            dump_paths,
            ..
        } => {
            if let Some(m) = measure {
                o.measure = Some(match m {
                    MeasureArg::Physical => MeasureName::Physical,
                    MeasureArg::RiskNeutral => MeasureName::RiskNeutral,
                });
            }
            o.antithetic = antithetic.or(o.antithetic);
            o.dump_paths = dump_paths.or(o.dump_paths);
        }
        Command::Spectrum { lambda: Some(l) } => o.lambda = Some(l.clone()),
        Command::LaplaceCheck { lambda: Some(l) } => o.lambda = Some(vec![*l]),
        _ => {}
    }

    let base = path.parent().unwrap_or(Path::new("."));
    Ok(cfg.build(base)?)
}

/// History on the requested grid, or as given.
fn history_on_grid(l: &Loaded) -> Result<crate::history::HistorySegment, CliError> {
    match l.config.options.dt {
        Some(dt) => l
            .history
            .resample(dt)
            .map_err(|e| SchemaError {
                pointer: "/options/dt".into(),
                message: e.to_string(),
            }
            .into()),
        None => Ok(l.history.clone()),
    }
}

#[derive(Serialize)]
struct ValuationRecord {
    #[serde(serialize_with = "sci")]
    discount_rate: f64,
    #[serde(rename = "K", serialize_with = "sci")]
    k: f64,
    #[serde(serialize_with = "sci")]
    lambda0: f64,
    #[serde(serialize_with = "sci")]
    present_term: f64,
    #[serde(serialize_with = "sci")]
    past_term: f64,
    #[serde(serialize_with = "sci")]
    total: f64,
}

fn price(l: &Loaded) -> Result<Report, CliError> {
    let v = human_capital_poisson(&l.model, &l.history, l.config.options.delta.unwrap_or(0.0))?;
    let text = to_csv(
        &["discount_rate", "K", "lambda0", "present_term", "past_term", "total"],
        [vec![
            num(v.discount_rate),
            num(v.k),
            num(v.lambda0),
            num(v.present_term),
            num(v.past_term),
            num(v.total),
        ]],
    );
    Ok(Report::ok(text))
}

#[derive(Serialize)]
struct EstimateRecord {
    #[serde(serialize_with = "sci")]
    value: f64,
    #[serde(serialize_with = "sci")]
    std_error: f64,
    n_paths: usize,
    #[serde(rename = "T", serialize_with = "sci")]
    horizon: f64,
    #[serde(serialize_with = "sci")]
    tail_bound: f64,
}

impl From<&McEstimate> for EstimateRecord {
    fn from(e: &McEstimate) -> Self {
        Self {
            value: e.value,
            std_error: e.std_error,
            n_paths: e.n_paths,
            horizon: e.horizon,
            tail_bound: e.truncation_tail_bound,
        }
    }
}

#[derive(Serialize)]
struct McCheckRecord {
    measure: &'static str,
    antithetic: bool,
    seed: u64,
    #[serde(serialize_with = "sci")]
    dt: f64,
    closed_form: ValuationRecord,
    estimate: EstimateRecord,
    /// Expectation of the discretised estimator minus the closed form.
    #[serde(serialize_with = "sci")]
    euler_bias: f64,
    #[serde(serialize_with = "sci")]
    z: f64,
}

fn mc_check(l: &Loaded, dump: Option<&Path>) -> Result<Report, CliError> {
    let o = &l.config.options;
    let delta = o.delta.unwrap_or(0.0);
    let closed = human_capital_poisson(&l.model, &l.history, delta)?;
    let dt = o.dt.unwrap_or(l.history.dt());
    let mut cfg = SimConfig::new(dt, o.paths.unwrap_or(DEFAULT_PATHS), o.seed.unwrap_or(DEFAULT_SEED))
        .with_measure(o.measure.map(Measure::from).unwrap_or(Measure::RiskNeutral))
        .with_antithetic(o.antithetic.unwrap_or(false));
    cfg.horizon = o.horizon;

    let est = mc_human_capital_poisson(&l.model, &l.history, &cfg, delta)?;
    let sim_hist = history_on_grid(l)?;
    let euler = euler_discounted_value(&l.model, &sim_hist, closed.discount_rate, est.horizon)?;
    let z = if est.std_error > 0.0 {
        (est.value - closed.total) / est.std_error
    } else if est.value == closed.total {
        0.0
    } else {
        f64::INFINITY.copysign(est.value - closed.total)
    };

    if let Some(path) = dump {
        let n = o.dump_paths.unwrap_or(DEFAULT_DUMP_PATHS).max(2);
        let dump_cfg = SimConfig { n_paths: n, antithetic: false, horizon: Some(est.horizon), ..cfg };
        let paths = simulate_income(&l.model, &l.history, &dump_cfg)?;
        let times: Vec<f64> = paths.times().collect();
        let rows = paths.x.iter().zip(&paths.xi).enumerate().flat_map(|(p, (x, xi))| {
            times
                .iter()
                .zip(x.iter().zip(xi))
                .map(move |(&t, (&x, &xi))| vec![p.to_string(), num(t), num(x), num(xi)])
        });
        let text = to_csv(&["path", "t", "X0", "xi"], rows);
        std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    }

    let record = McCheckRecord {
        measure: cfg.measure.as_str(),
        antithetic: cfg.antithetic,
        seed: cfg.seed,
        dt,
        closed_form: ValuationRecord {
            discount_rate: closed.discount_rate,
            k: closed.k,
            lambda0: closed.lambda0,
            present_term: closed.present_term,
            past_term: closed.past_term,
            total: closed.total,
        },
        estimate: (&est).into(),
        euler_bias: euler - closed.total,
        z,
    };
    Ok(Report {
        text: to_json(&record),
        exit_code: if z.abs() > Z_LIMIT { EXIT_Z_BREACH } else { EXIT_OK },
    })
}

fn spectrum(l: &Loaded) -> Result<Report, CliError> {
    let lambda0 = l.model.spectral_bound()?;
    let o = &l.config.options;
    let mut grid = match (&o.lambda, o.lambda_grid) {
        (Some(v), _) => v.clone(),
        (None, Some(g)) => g.values(),
        (None, None) => {
            let r = l.market.rate();
            config::LambdaGrid {
                from: lambda0.min(0.0) - 0.05,
                to: r.max(lambda0) + 0.05,
                points: DEFAULT_GRID_POINTS,
            }
            .values()
        }
    };
    grid.push(lambda0);
    grid.sort_by(f64::total_cmp);
    let rows = grid.into_iter().map(|x| {
        let root = if x == lambda0 { "1" } else { "0" };
        vec![num(x), num(l.model.char_function(x)), root.to_string()]
    });
    Ok(Report::ok(to_csv(&["lambda", "K", "root"], rows)))
}

fn mean_path_cmd(l: &Loaded) -> Result<Report, CliError> {
    let hist = history_on_grid(l)?;
    let horizon = l.config.options.horizon.unwrap_or(DEFAULT_MEAN_HORIZON);
    let m = mean_path(&l.model, &hist, horizon)?;
    let rows = m.times().zip(&m.values).map(|(t, &v)| vec![num(t), num(v)]);
    Ok(Report::ok(to_csv(&["t", "M0"], rows)))
}

#[derive(Serialize)]
struct LaplaceRecord {
    #[serde(serialize_with = "sci")]
    lambda: f64,
    #[serde(serialize_with = "sci")]
    lambda0: f64,
    #[serde(serialize_with = "sci")]
    lhs: f64,
    #[serde(serialize_with = "sci")]
    rhs: f64,
    #[serde(serialize_with = "sci")]
    gap: f64,
    #[serde(rename = "T_max", serialize_with = "sci")]
    t_max: f64,
    #[serde(serialize_with = "sci")]
    dt: f64,
    #[serde(serialize_with = "sci")]
    tail_bound: f64,
    #[serde(serialize_with = "sci_opt")]
    euler_error_estimate: Option<f64>,
}

fn laplace_cmd(l: &Loaded) -> Result<Report, CliError> {
    let hist = history_on_grid(l)?;
    let o = &l.config.options;
    let lambda = o
        .lambda
        .as_ref()
        .and_then(|v| v.first().copied())
        .unwrap_or(l.market.rate() + o.delta.unwrap_or(0.0));
    let opts = LaplaceOptions {
        t_max: o.horizon,
        ..LaplaceOptions::default()
    };
    let c = laplace_check(&l.model, &hist, lambda, opts)?;
    let record = LaplaceRecord {
        lambda: c.lambda,
        lambda0: c.lambda0,
        lhs: c.lhs,
        rhs: c.rhs,
        gap: c.gap,
        t_max: c.t_max,
        dt: c.dt,
        tail_bound: c.tail_bound,
        euler_error_estimate: c.euler_error_estimate,
    };
    Ok(Report::ok(to_json(&record)))
}
