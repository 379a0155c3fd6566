//! `sfc`: fit the spatio-functional clustering model from a config file,
//! generate synthetic scenarios, summarize finished runs, and self-check
//! the numerics.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure in every chain, 1 otherwise.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sfc_core::error::SfcError;

#[derive(Parser)]
#[command(name = "sfc", version, about = "Bayesian spatio-functional clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pilot and main chains as configured and write all artifacts.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic dataset from a named preset, reproducibly.
    Simulate {
        /// Scenario name; run with an unknown name to list the choices.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Merge the per-chain samples of a finished run into summaries.
    Summarize {
        /// Directory containing manifest.json and the chain files.
        #[arg(long)]
        run_dir: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the numeric self-check suite and print one line per check.
    Check,
}

fn exit_code(e: &SfcError) -> u8 {
    match e {
        SfcError::Config(_) => 2,
        SfcError::Data(_) | SfcError::Io(_) => 3,
        SfcError::NumericDomain(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => commands::run(&config),
        Command::Simulate { preset, seed, out_dir } => {
            commands::run_simulate(&preset, seed, &out_dir)
        }
        Command::Summarize { run_dir, out_dir } => {
            commands::summarize(&run_dir, out_dir.as_deref())
        }
        Command::Check => commands::check(),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
