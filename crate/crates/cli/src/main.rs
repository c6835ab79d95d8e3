//! `kbope`: simulate off-policy data, compute kernel confidence bounds, diagnose
//! estimators, run the importance-sampling baseline and sweep experiment grids.
//!
//! Exit codes: 0 on success (a rejected hypothesis class is a reported result),
//! 2 on usage errors, 3 on I/O or parse errors.

mod commands;
mod config;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Parse(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Parse(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
        }
    }
}

impl From<kbope::Error> for CliError {
    fn from(e: kbope::Error) -> Self {
        match e {
            kbope::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "kbope", version, about = "Kernel Bellman confidence bounds for off-policy evaluation")]
pub struct Cli {
    /// Master seed for every random draw the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset, trajectories, environment and policy files, and a value oracle for tabular environments.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Upper and lower bounds on the target policy's value.
    Bounds(BoundsArgs),
    /// Post-hoc bounds around an estimator plus its minimum-norm correction.
    Diagnose(EstimatorArgs),
    /// Minimum-norm correction of an estimator only.
    Debias(EstimatorArgs),
    /// Truncated importance-sampling lower bound.
    BaselineIs(BaselineArgs),
    /// Run a seed × n × δ × bandwidth grid and write CSV rows plus a summary.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON path; defaults to the CSV path with a `.summary.json` suffix.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Record `wall_ms` as 0 so output is byte-reproducible.
        #[arg(long)]
        no_timing: bool,
    },
}

#[derive(Args, Debug)]
pub struct InputArgs {
    /// Transitions, one JSON object per line.
    #[arg(long)]
    pub data: PathBuf,
    /// Target policy JSON.
    #[arg(long)]
    pub policy: PathBuf,
    /// Bounds configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Environment JSON used to draw the initial-state sample.
    #[arg(long, conflicts_with = "init")]
    pub env: Option<PathBuf>,
    /// Precomputed initial state-action pairs, one `[state, action]` per line.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Result JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Append a sweep-schema CSV row to this file.
    #[arg(long)]
    pub append_csv: Option<PathBuf>,
    /// Known true value, recorded in the appended row.
    #[arg(long)]
    pub eta_true: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EstimatorArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Estimator: a JSON array of feature weights for the configured features,
    /// or `{"table": [[...]]}` for a tabular Q.
    #[arg(long)]
    pub q_hat: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub behavior: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Truncation threshold; repeat or comma-separate for a sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub c: Vec<f64>,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub gamma: f64,
    /// Per-step reward bound for the analytic normalization range.
    #[arg(long)]
    pub r_max: f64,
    /// Result JSON path (one threshold) or CSV path (several); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kbope: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
