//! `meirl`: dataset generation, training, prediction and evaluation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{MethodName, Split};
use crate::error::{config, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "meirl",
    version,
    about = "Trajectory forecasting with max-ent deep IRL"
)]
struct Cli {
    /// Worker threads for data-parallel work; MEIRL_WORKERS takes precedence.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Export forecasts for one demonstration.
    Predict(PredictArgs),
    /// Compare methods on a dataset's test split.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub demos: Option<usize>,
    /// Fraction of demonstrations in the train split.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Cell size in meters.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Branching points per world.
    #[arg(long)]
    pub intersections: Option<usize>,
    #[arg(long)]
    pub trails: Option<usize>,
    #[arg(long)]
    pub horizon_min: Option<usize>,
    #[arg(long)]
    pub horizon_max: Option<usize>,
    /// Scenario-tag balancing: `equal` or `none`.
    #[arg(long)]
    pub balance: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One of ours, irl_nokin, bc.
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue training from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Save a checkpoint every N iterations (0 = only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Train without the quarter-turn rotation copies.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trained model (bc, irl_nokin or ours).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Needed for ekf and random, which have no checkpoint.
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// Record index within the split.
    #[arg(long)]
    pub index: Option<usize>,
    /// Sampled trajectories to export.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the terrain channels with constants.
    #[arg(long)]
    pub zero_lidar: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated subset of ekf,bc,random,irl_nokin,ours.
    #[arg(long, value_delimiter = ',', value_enum)]
    pub methods: Option<Vec<MethodName>>,
    /// METHOD=PATH, repeatable.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<String>,
    /// Rollouts per demonstration.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub zero_lidar: bool,
}

fn workers(flag: Option<usize>) -> CliResult<Option<usize>> {
    match std::env::var("MEIRL_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(config(format!(
                "MEIRL_WORKERS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => match flag {
            Some(0) => Err(config("--workers must be at least 1")),
            other => Ok(other),
        },
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = workers(cli.workers)? {
        meirl_core::par::init_workers(n);
    }
    match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
