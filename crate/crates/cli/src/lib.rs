//! `ldbound` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 infeasible,
//! 4 limit hit. CSV outputs start with a `#` line naming the schema version
//! and the columns that hold wallclock times (the only nondeterministic
//! fields).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldbound::instances::Family;
use ldbound::solver::BoundingMode;

mod commands;
mod output;

pub use commands::{
    cmd_bench, cmd_bound, cmd_generate, cmd_solve, cmd_train, BenchRow, BoundRow, TrainSummary,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_LIMIT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Failed(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

/// Result of a command that completed; maps onto an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Infeasible,
    LimitHit,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => EXIT_OK,
            Outcome::Infeasible => EXIT_INFEASIBLE,
            Outcome::LimitHit => EXIT_LIMIT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ldbound", version, about = "Lagrangian dual bounds with learned multipliers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded random instances as JSON files.
    Generate(GenerateArgs),
    /// Train a multiplier network on a directory of instances.
    Train(TrainArgs),
    /// Trace the dual bound of one instance.
    Bound(BoundArgs),
    /// Solve one instance with branch-and-bound.
    Solve(SolveArgs),
    /// Solve every instance of a directory with several modes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub family: Family,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// Seed of the first instance; instance k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// MKP items.
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    /// MKP dimensions.
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tightness: f64,
    #[arg(long, default_value_t = 50)]
    pub periods: usize,
    #[arg(long, default_value_t = 10)]
    pub activities: usize,
    #[arg(long, default_value_t = 20)]
    pub states: usize,
    #[arg(long, default_value_t = 2)]
    pub constraints: usize,
    #[arg(long, default_value_t = 0.3)]
    pub undef_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub final_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training instances.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = ldbound::neural::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum number of fixed variables in augmented samples.
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Samples per instance, the empty assignment included.
    #[arg(long, default_value_t = 1)]
    pub augment: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Write `<out>.epoch<k>.bin` every k epochs (0: never).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Continue training from this model.
    #[arg(long)]
    pub init_model: Option<PathBuf>,
    /// Training history CSV; defaults to `<out>.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MuSource {
    Zero,
    Model,
    Sg,
    #[value(name = "model+sg")]
    ModelSg,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SgArgs {
    /// Sub-gradient iterations (root iterations for the solver).
    #[arg(long)]
    pub sg_iters: Option<usize>,
    #[arg(long)]
    pub sg_alpha0: Option<f64>,
    #[arg(long)]
    pub sg_decay: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LimitArgs {
    /// Wallclock limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub max_nodes: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long = "mu", value_enum, default_value_t = MuSource::Zero)]
    pub source: MuSource,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub sg: SgArgs,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value = "cp")]
    pub mode: BoundingMode,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub limits: LimitArgs,
    #[command(flatten)]
    pub sg: SgArgs,
    /// Also write the JSON result here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory of instances.
    #[arg(long)]
    pub instances: PathBuf,
    /// Comma-separated modes.
    #[arg(long = "mode", value_delimiter = ',', default_value = "cp,cp+sg")]
    pub modes: Vec<BoundingMode>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub limits: LimitArgs,
    #[command(flatten)]
    pub sg: SgArgs,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| Outcome::Success),
        Command::Train(a) => cmd_train(a).map(|_| Outcome::Success),
        Command::Bound(a) => cmd_bound(a).map(|(_, outcome)| outcome),
        Command::Solve(a) => cmd_solve(a).map(|(_, outcome)| outcome),
        Command::Bench(a) => cmd_bench(a).map(|_| Outcome::Success),
    };
    match result {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("ldbound: {e:#}");
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}
