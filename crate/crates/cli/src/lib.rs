//! CLI wiring: argument parsing, config resolution, and subcommands.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when
//! training diverges, 1 for other runtime failures.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Overrides, Resolved};

/// Command failures, split by the exit code they map to.
#[derive(Debug)]
pub enum AppError {
    /// Bad configuration or usage; exit 2.
    Config(ConfigError),
    /// Training produced a non-finite loss; exit 3.
    Diverged(String),
    /// Any other runtime failure (I/O, missing artifacts); exit 1.
    Runtime(String),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(e) => write!(f, "{e}"),
            AppError::Diverged(msg) | AppError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Diverged(_) => 3,
            AppError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e)
    }
}

impl From<plot_core::Error> for AppError {
    fn from(e: plot_core::Error) -> Self {
        match e {
            plot_core::Error::Diverged(msg) => AppError::Diverged(format!("training diverged: {msg}")),
            other => AppError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "plot",
    version,
    about = "Proportion-constrained transport pseudo-labeling for bag-level supervision"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command that starts from a configuration.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Sectioned key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for data generation, initialization, and shuffling.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, value_name = "DIR", default_value = "run")]
    out: PathBuf,
    /// Instances per bag.
    #[arg(long, value_name = "N")]
    bag_size: Option<usize>,
}

/// Training knobs exposed as flags; anything not given falls back to the
/// config file, then to built-in defaults.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// Regularization strength of the entropic transport solver.
    #[arg(long, value_name = "X")]
    lambda: Option<f64>,
    /// Label-refresh mode: soft | hard | hard-exact | none.
    #[arg(long, value_name = "MODE")]
    ot_mode: Option<String>,
    /// Supervised loss: ce | sce.
    #[arg(long, value_name = "LOSS")]
    loss: Option<String>,
    /// Pair interpolation during the second stage: on | off.
    #[arg(long, value_name = "STATE")]
    mixup: Option<String>,
    /// Epochs of bag-proportion pre-training (0 skips the stage).
    #[arg(long, value_name = "N")]
    stage1_epochs: Option<usize>,
    /// Epochs of alternating refinement training (0 skips the stage).
    #[arg(long, value_name = "N")]
    stage2_epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset with its bag partition and write both as CSV.
    Generate {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run the two-stage training pipeline and write run artifacts.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Compare the entropic solver against the exact one across strengths.
    SweepLambda {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated list of regularization strengths.
        #[arg(long, value_name = "X,Y,..")]
        lambdas: String,
    },
    /// Render accuracy curves and, for 2-D data, decision regions.
    Plot {
        /// Run directory produced by `train`.
        run_dir: PathBuf,
    },
    /// Score a saved checkpoint on a dataset CSV.
    Evaluate {
        /// Run directory containing the checkpoint.
        run_dir: PathBuf,
        /// Dataset CSV; defaults to the run's held-out, then training data.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Name of the label column.
        #[arg(long, value_name = "NAME", default_value = artifacts::LABEL_COLUMN)]
        label_column: String,
    },
}

fn load_config_map(
    path: &Option<PathBuf>,
) -> Result<BTreeMap<String, String>, AppError> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| {
                AppError::Config(ConfigError(format!(
                    "config file not found: {}",
                    p.display()
                )))
            })?;
            Ok(config::parse_file(&text)?)
        }
    }
}

/// Worker-count cap from the environment; 0 keeps automatic selection.
fn env_threads() -> Result<Option<usize>, AppError> {
    match std::env::var("PLOT_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => v.parse::<usize>().map(Some).map_err(|_| {
            AppError::Config(ConfigError(format!(
                "PLOT_THREADS: expected a non-negative integer, got {v:?}"
            )))
        }),
    }
}

fn resolve_with(
    common: &ConfigArgs,
    flags: Option<&TrainFlags>,
) -> Result<Resolved, AppError> {
    let map = load_config_map(&common.config)?;
    let mut over = Overrides {
        seed: common.seed,
        bag_size: common.bag_size,
        ..Overrides::default()
    };
    if let Some(f) = flags {
        over.lambda = f.lambda;
        over.ot_mode = f.ot_mode.clone();
        over.loss = f.loss.clone();
        over.mixup = f.mixup.clone();
        over.stage1_epochs = f.stage1_epochs;
        over.stage2_epochs = f.stage2_epochs;
    }
    let mut resolved = config::resolve(&map, &over)?;
    if let Some(threads) = env_threads()? {
        resolved.train.num_threads = threads;
    }
    Ok(resolved)
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Generate { common } => {
            let resolved = resolve_with(&common, None)?;
            commands::cmd_generate(&resolved, &common.out)
        }
        Command::Train { common, flags } => {
            let resolved = resolve_with(&common, Some(&flags))?;
            commands::cmd_train(&resolved, &common.out)
        }
        Command::SweepLambda { common, lambdas } => {
            let resolved = resolve_with(&common, None)?;
            let values: Vec<f64> = lambdas
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        AppError::Config(ConfigError(format!(
                            "--lambdas: expected a real number, got {s:?}"
                        )))
                    })
                })
                .collect::<Result<_, _>>()?;
            commands::cmd_sweep_lambda(&resolved, &values, &common.out)
        }
        Command::Plot { run_dir } => commands::cmd_plot(&run_dir),
        Command::Evaluate {
            run_dir,
            data,
            label_column,
        } => commands::cmd_evaluate(&run_dir, data.as_deref(), &label_column),
    }
}

/// Entry point shared by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
