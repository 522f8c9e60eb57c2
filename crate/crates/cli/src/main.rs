mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Loaded;
use error::CliError;

/// Synthetic control arms from real-world data with common-atoms mixture models.
#[derive(Parser)]
#[command(name = "camsynth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Study config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replicate-level parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the covariate chain (and the outcome chain when an outcome is configured).
    Fit(Common),
    /// Importance weights of the RWD rows.
    Weights(Common),
    /// Draw the synthetic control arm.
    Resample(Common),
    /// Cross-validated classifier AUC of trial arm vs synthetic control.
    Validate(Common),
    /// Model-based and two-step treatment effects.
    Effect(Common),
    /// Goodness-of-fit U values and QQ export.
    Gof(Common),
    /// Generate a simulated study and a config to analyse it.
    Simulate(Common),
    /// Calibrated power of one simulation cell.
    Power(Common),
    /// All analysis stages in order.
    Pipeline(Common),
    /// Summarize the artifacts of a config.
    Report(Common),
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    type Step = fn(&Loaded) -> Result<Vec<PathBuf>, CliError>;
    let (common, step): (Common, Step) = match cli.command {
        Command::Fit(c) => (c, commands::fit),
        Command::Weights(c) => (c, commands::weights),
        Command::Resample(c) => (c, commands::resample),
        Command::Validate(c) => (c, commands::validate),
        Command::Effect(c) => (c, commands::effect),
        Command::Gof(c) => (c, commands::gof),
        Command::Simulate(c) => (c, commands::simulate),
        Command::Power(c) => (c, commands::power),
        Command::Pipeline(c) => (c, commands::pipeline),
        Command::Report(c) => (c, commands::report),
    };
    if let Some(n) = common.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let loaded = Loaded::read(&common.config, common.seed, common.out)?;
    step(&loaded)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
