//! `weakroute` command-line tool.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weakroute_core::models::Topology;
use weakroute_core::training::Protocol;
use weakroute_core::Error;

/// Exit status for configuration and input errors.
pub const EXIT_INPUT: u8 = 2;
/// Exit status for numeric failures.
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } => CliError::numeric(e.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "weakroute", version, about = "Weakness-routed training of multi-pathway classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config (or a previous run's manifest.json).
    Train { config: PathBuf },
    /// Evaluate a checkpoint on IDX files or a `synth:key=value,...` dataset.
    Eval {
        checkpoint: PathBuf,
        data: String,
        #[arg(long, default_value = "mean")]
        protocol: Protocol,
        /// Label file for IDX images; inferred from the image file name when omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Fail unless the checkpoint holds this topology.
        #[arg(long)]
        topology: Option<Topology>,
    },
    /// Compare the test predictions of two runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Output directory; defaults to `<run_a>/comparison`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the weakroute loss gradient on a tiny model.
    Gradcheck {
        #[arg(long)]
        topology: Topology,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("WEAKROUTE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("WEAKROUTE_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 1 {
        weakroute_core::par::set_parallel(false);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train { config } => commands::train(&config),
        Command::Eval {
            checkpoint,
            data,
            protocol,
            labels,
            topology,
        } => commands::eval(&checkpoint, &data, protocol, labels.as_deref(), topology),
        Command::Compare { run_a, run_b, out } => commands::compare(&run_a, &run_b, out.as_deref()),
        Command::Gradcheck { topology, seed } => commands::gradcheck(topology, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
