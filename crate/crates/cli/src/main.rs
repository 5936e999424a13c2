//! `mortboost`: fit, back-test and cause-of-death runs from the command line.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mortboost::Gender;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;
pub const EXIT_INTERNAL: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<mortboost::Error> for CliError {
    fn from(e: mortboost::Error) -> Self {
        let code = match e {
            mortboost::Error::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn parse_range<T>(s: &str) -> Result<RangeInclusive<T>, String>
where
    T: std::str::FromStr + PartialOrd,
{
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected FROM:TO, got {s:?}"))?;
    let a: T = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
    let b: T = b.trim().parse().map_err(|_| format!("bad range end in {s:?}"))?;
    if a > b {
        return Err(format!("empty range {s:?}"));
    }
    Ok(a..=b)
}

fn parse_ages(s: &str) -> Result<RangeInclusive<u32>, String> {
    parse_range(s)
}

fn parse_years(s: &str) -> Result<RangeInclusive<i32>, String> {
    parse_range(s)
}

#[derive(Parser, Debug)]
#[command(
    name = "mortboost",
    version,
    about = "Poisson mortality models with regression-tree back-testing",
    long_about = "Poisson mortality models with regression-tree back-testing.\n\n\
        Every command accepts --config FILE with `flag = value` lines; flags given on the \
        command line take precedence. The MORTBOOST_THREADS environment variable sets the \
        number of worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a Lee-Carter or Renshaw-Haberman model to HMD deaths and exposures.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Back-test a fitted rate surface with one Poisson regression tree.
    #[command(args_override_self = true)]
    Backtest(BacktestArgs),
    /// Estimate cause-of-death probabilities on age groups.
    #[command(args_override_self = true)]
    Cod(CodArgs),
    /// Write synthetic deaths, exposures and cause-of-death files.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Verify the identifiability constraints of a parameter file.
    #[command(args_override_self = true)]
    Check(CheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArg {
    Lc,
    Rh,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Model to fit.
    #[arg(value_enum)]
    pub model: ModelArg,
    /// HMD Deaths_1x1 file.
    #[arg(long)]
    pub deaths: PathBuf,
    /// HMD Exposures_1x1 file.
    #[arg(long)]
    pub exposures: PathBuf,
    /// Age range FROM:TO; older ages are pooled into TO unless --no-pool.
    #[arg(long, value_parser = parse_ages)]
    pub ages: RangeInclusive<u32>,
    /// Calendar years FROM:TO.
    #[arg(long, value_parser = parse_years)]
    pub years: RangeInclusive<i32>,
    /// Genders to fit (default: both).
    #[arg(long, value_delimiter = ',')]
    pub genders: Option<Vec<Gender>>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative deviance tolerance for convergence.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Lower clamp for fitted rates.
    #[arg(long)]
    pub rate_floor: Option<f64>,
    /// Lee-Carter params.csv used as the starting point of an rh fit.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Drop ages above the range instead of pooling them into the top age.
    #[arg(long)]
    pub no_pool: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagArg {
    Lc,
    Rh,
    External,
}

#[derive(Args, Debug)]
pub struct TreeArgs {
    /// Cost-complexity threshold as a fraction of the root deviance.
    #[arg(long, default_value_t = 2e-3)]
    pub cp: f64,
    /// Minimum number of points per leaf.
    #[arg(long, default_value_t = 10)]
    pub min_bucket: usize,
    #[arg(long, default_value_t = 30)]
    pub max_depth: usize,
}

#[derive(Args, Debug)]
pub struct BacktestArgs {
    /// Fitted rates (gender,age,year,q) defining the grid.
    #[arg(long)]
    pub qfit: PathBuf,
    #[arg(long)]
    pub deaths: PathBuf,
    #[arg(long)]
    pub exposures: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Model that produced the rates, recorded in the manifest.
    #[arg(long, value_enum, default_value_t = TagArg::External)]
    pub model: TagArg,
    /// Years whose initial and improved log-rates are plotted.
    #[arg(long, value_delimiter = ',')]
    pub years_to_plot: Vec<i32>,
    /// Relative changes within this band are drawn white.
    #[arg(long, default_value_t = 0.05)]
    pub white_band: f64,
    #[arg(long)]
    pub no_pool: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaInit {
    Uniform,
    Empirical,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaVariant {
    Raw,
    Normalized,
}

#[derive(Args, Debug)]
pub struct CodArgs {
    /// Cause-of-death counts (gender,age_group,year,cause,deaths).
    #[arg(long)]
    pub cod: PathBuf,
    /// Single-age fitted rates (gender,age,year,q).
    #[arg(long)]
    pub qfit: PathBuf,
    /// HMD Exposures_1x1 file.
    #[arg(long)]
    pub exposures: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Age groups, e.g. "0;1-14;15-44;45-64;65-84;85+".
    #[arg(long, default_value = mortboost::domain::DEFAULT_COD_BUCKETS)]
    pub buckets: String,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long, value_enum, default_value_t = ThetaInit::Uniform)]
    pub theta_init: ThetaInit,
    /// Adds a centered moving average over this many years to theta.csv.
    #[arg(long)]
    pub smooth_window: Option<usize>,
    /// Number of causes labelled 1..=N (default: the 12 standard causes).
    #[arg(long, conflicts_with = "cause_labels")]
    pub causes: Option<usize>,
    /// Explicit cause labels, in file order.
    #[arg(long, value_delimiter = ',')]
    pub cause_labels: Option<Vec<String>>,
    /// Which theta estimate the residuals are computed from.
    #[arg(long, value_enum, default_value_t = ThetaVariant::Raw)]
    pub residuals_from: ThetaVariant,
    #[arg(long)]
    pub no_pool: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file with `key = value` lines.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// params.csv written by `fit`.
    #[arg(long)]
    pub params: PathBuf,
    /// Largest accepted constraint residual, scaled by the largest
    /// parameter magnitude in the sum when that exceeds 1.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Directory for a manifest of the check.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Splices `--config FILE` contents in front of the remaining flags so that
/// explicit flags override the file.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let pos = args.iter().position(|a| a == "--config");
    let Some(pos) = pos else {
        return Ok(args);
    };
    let path = args
        .get(pos + 1)
        .ok_or_else(|| CliError::usage("--config needs a file"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.to_string_lossy())))?;
    let mut injected = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("config line {}: expected flag = value", i + 1))
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        injected.push(OsString::from(format!("--{key}")));
        if value != "true" {
            injected.push(OsString::from(value));
        }
    }
    let mut out: Vec<OsString> = Vec::with_capacity(args.len() + injected.len());
    // program name and subcommand come first
    let split = 2.min(args.len());
    out.extend(args[..split].iter().cloned());
    out.extend(injected);
    out.extend(
        args[split..]
            .iter()
            .enumerate()
            .filter(|(i, _)| *i + split != pos && *i + split != pos + 1)
            .map(|(_, a)| a.clone()),
    );
    Ok(out)
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("MORTBOOST_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::usage(format!("MORTBOOST_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    Ok(())
}

fn run() -> Result<u8, CliError> {
    let args = expand_config(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return Ok(code);
        }
    };
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Backtest(a) => commands::backtest(&a),
        Command::Cod(a) => commands::cod(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Check(a) => commands::check(&a),
    }
}

fn main() -> ExitCode {
    let result = std::panic::catch_unwind(run);
    match result {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}
