//! `rnnfast`: map, simulate and sweep RNN workloads on the racetrack accelerator model.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use rnnfast_core::mapping::{MappingError, Shortfall, SpecError};
use rnnfast_core::sim::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid manifest: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("capacity exceeded: {0}")]
    Capacity(Shortfall),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Validation { .. } => 1,
            Self::Capacity(_) => 2,
            Self::Io { .. } => 3,
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        let SpecError::Invalid { field, message } = e;
        Self::Validation { field, message }
    }
}

impl From<MappingError> for CliError {
    fn from(e: MappingError) -> Self {
        match e {
            MappingError::Spec(s) => s.into(),
            MappingError::CapacityExceeded(s) => Self::Capacity(s),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Spec(s) => s.into(),
            other => Self::Validation { field: "manifest".into(), message: other.to_string() },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rnnfast", version, about = "Racetrack-memory RNN accelerator simulator")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Machine-readable output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `error.seed` in the manifest.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Place the network and report resource usage.
    Map(Common),
    /// Simulate the manifest and write the run result as JSON.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write a per-event trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep overshift probability with EDC off and on; write CSV.
    SweepErrors {
        #[command(flatten)]
        common: Common,
        /// Seeds per (p, EDC) cell, counting up from the base seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Evaluate the network with the double-precision reference.
    OracleRun(Common),
    /// Tabulate sigmoid/tanh, exact and hardware, over a Q8.8 range as CSV.
    DumpActivation {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = -8.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 8.0, allow_hyphen_values = true)]
        hi: f64,
    },
    /// Simulate and summarize latency, energy breakdown and utilization.
    Report(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation { field: "--threads".into(), message: "must be positive".into() });
        }
        // ignore an already-initialized pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Map(c) => commands::map(&c),
        Command::Run { common, trace } => commands::run(&common, trace.as_deref()),
        Command::SweepErrors { common, seeds } => commands::sweep_errors(&common, seeds),
        Command::OracleRun(c) => commands::oracle_run(&c),
        Command::DumpActivation { out, lo, hi } => commands::dump_activation(out.as_deref(), lo, hi),
        Command::Report(c) => commands::report(&c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RNNFAST_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
