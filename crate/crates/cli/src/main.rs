//! `gyrochap`: simulate, verify, and solve the gyroscopic rolling ball from a JSON config.

mod compare;
mod config;
mod output;
mod pool;
mod simulate;
mod solve;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gyrochap_core::Error;

#[derive(Debug, Parser)]
#[command(name = "gyrochap", version, about = "Gyroscopic Chaplygin ball rolling over a sphere in R^n")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Io {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed for random initial states and sampled checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the configured flow; write the trajectory and a drift report.
    Simulate(Io),
    /// Run the structural checks and compare them with their expected outcomes.
    Verify(Io),
    /// Closed-form Demchenko solution (isotropic, n = 3 or 4) against the numeric one.
    SolveDemchenko(Io),
    /// Batch of seeded initial states run in parallel, each cross-checked against
    /// the Hamiltonized and closed-form solutions where those apply.
    Compare(Io),
}

/// Why a command did not succeed; each maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    /// Checks ran but disagreed with their expectations.
    Mismatch(String),
    Config(String),
    Integration(String),
    Uncertified(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Mismatch(_) => 1,
            Failure::Config(_) => 2,
            Failure::Integration(_) => 3,
            Failure::Uncertified(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Mismatch(m) | Failure::Config(m) | Failure::Integration(m) | Failure::Uncertified(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = format!("{e:?}: {e}");
        match e {
            Error::Uncertified { .. } => Failure::Uncertified(msg),
            Error::StepSizeUnderflow { .. }
            | Error::NonFiniteState(_)
            | Error::TooManySteps(_)
            | Error::Singular(_)
            | Error::PoleProximity(_)
            | Error::BelowRealBranch { .. }
            | Error::MissingDenseOutput
            | Error::EmptyTrajectory => Failure::Integration(msg),
            _ => Failure::Config(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(io) => simulate::run(&io.config, &io.out, io.seed),
        Command::Verify(io) => verify::run(&io.config, &io.out, io.seed),
        Command::SolveDemchenko(io) => solve::run(&io.config, &io.out, io.seed),
        Command::Compare(io) => compare::run(&io.config, &io.out, io.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gyrochap: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
