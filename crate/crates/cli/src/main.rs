//! `wcca`: simulate, ingest and analyse samples of distribution-valued curves.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error. `WCCA_THREADS` sets
//! the worker thread count.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CvArgs, EstimateArgs, IngestArgs, SimulateArgs};

#[derive(Debug, Parser)]
#[command(name = "wcca", version, about = "Wasserstein canonical correlation for distribution-valued curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo replicates of the Beta-mean benchmark.
    Simulate(SimulateArgs),
    /// Canonical correlation between two datasets.
    Estimate(EstimateArgs),
    /// Convert per-frame sample lists into a quantile table.
    Ingest(IngestArgs),
    /// Cross-validation scores of every candidate tuning.
    Cv(CvArgs),
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(wcca::Error),
}

impl From<wcca::Error> for Failure {
    fn from(e: wcca::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("WCCA_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Usage(format!("WCCA_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot start {threads} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Cv(a) => commands::cv(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
