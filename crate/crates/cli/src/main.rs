use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Serverless cluster simulator with a learning resource manager.
#[derive(Parser, Debug)]
#[command(name = "harvestsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key=value run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Overrides the `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory; falls back to `out_dir`, then $HARVESTSIM_OUT, then ./out.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic catalog and Poisson trace.
    GenTrace {
        #[arg(long)]
        calls: usize,
        #[arg(long)]
        mean_iat: f64,
        /// Number of random functions; the built-in four-function catalog when absent.
        #[arg(long)]
        functions: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the learning manager and write a checkpoint plus training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
        /// Resume from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one manager over the evaluation trace and write its report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manager: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every baseline (and the learning manager when a checkpoint is set).
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate the learning manager across safeguard thresholds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated values in [0, 1]; defaults to 0.0, 0.1, ..., 1.0.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
}

/// Bad flags or configuration; exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<harvestsim::Error>() {
        Some(harvestsim::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTrace { calls, mean_iat, functions, seed, out } => {
            commands::gen_trace(calls, mean_iat, functions, seed, out)
        }
        Command::Train { common, episodes, checkpoint } => commands::train(&common, episodes, checkpoint),
        Command::Eval { common, manager, checkpoint } => commands::eval(&common, manager, checkpoint),
        Command::Compare { common, checkpoint } => commands::compare(&common, checkpoint),
        Command::Sweep { common, checkpoint, thresholds } => commands::sweep(&common, checkpoint, thresholds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
