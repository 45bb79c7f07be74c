//! `irt`: simulate, fit and analyze classifier response matrices.
//!
//! Every subcommand writes its outputs plus a `run.json` echo of the
//! effective settings into `--out`; `--config run.json` replays a run, with
//! explicit flags taking precedence.

mod commands;
mod settings;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{AnalyzeArgs, CalibrateArgs, EnsembleArgs, FitArgs, RecoverArgs, SelectArgs, SimulateArgs};
use settings::{resolve, Settings};

#[derive(Parser)]
#[command(name = "irt", version, about = "Item response theory for classifier ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic responses, confidences, predictions and truth
    Simulate(SimulateArgs),
    /// Fit a model by variational inference
    Fit(FitArgs),
    /// Compare a posterior with the generating parameters
    Recover(RecoverArgs),
    /// Reliability, overconfidence or complexity reports
    Analyze(AnalyzeArgs),
    /// Pick the most discriminative items
    Select(SelectArgs),
    /// Voting accuracies under each weighting scheme
    Ensemble(EnsembleArgs),
    /// Replace confidences with fitted success probabilities
    Calibrate(CalibrateArgs),
}

fn execute<S: Settings + Sync>(flags: S, run: fn(&S) -> Result<()>) -> Result<()> {
    let settings = resolve(flags)?;
    let threads = settings.common().threads();
    anyhow::ensure!(threads >= 1, "--threads must be at least 1");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting the thread pool")?;
    pool.install(|| run(&settings))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => execute(a, commands::simulate),
        Command::Fit(a) => execute(a, commands::fit),
        Command::Recover(a) => execute(a, commands::recover),
        Command::Analyze(a) => execute(a, commands::analyze),
        Command::Select(a) => execute(a, commands::select),
        Command::Ensemble(a) => execute(a, commands::ensemble),
        Command::Calibrate(a) => execute(a, commands::calibrate),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
