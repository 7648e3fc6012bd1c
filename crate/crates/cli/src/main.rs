//! Command-line front end: plan wavelength channels, simulate time-tag
//! acquisitions, analyze tag files into link metrics, generate scaling
//! curves and evaluate key rates, all driven by one TOML config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 insufficient or
//! non-conjugate channels, 4 data-file parse error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use entnet_core::analytic::AnalyticError;
use entnet_core::coincidence::CoincidenceError;
use entnet_core::eventsim::EventSimError;
use entnet_core::netplan::NetplanError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Channels(String),
    #[error("{0}")]
    Parse(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Channels(_) => 3,
            CliError::Parse(_) => 4,
        }
    }
}

impl From<NetplanError> for CliError {
    fn from(e: NetplanError) -> Self {
        match e {
            NetplanError::InsufficientPairs { .. } | NetplanError::OrphanChannels(_) => {
                CliError::Channels(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EventSimError> for CliError {
    fn from(e: EventSimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CoincidenceError> for CliError {
    fn from(e: CoincidenceError) -> Self {
        match e {
            CoincidenceError::UnsortedStream(_) => CliError::Parse(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o error: {e}"))
    }
}

#[derive(Parser)]
#[command(
    name = "entnet",
    version,
    about = "Plan, simulate and analyze wavelength-multiplexed entanglement networks"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides [run] seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Strip ground-truth origin labels from simulated tag files.
    #[arg(long, global = true)]
    blind: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute conjugate channel pairs and assign them to the topology.
    Plan,
    /// Generate time-tag CSV files for the configured runs.
    Simulate,
    /// Turn tag files from a previous simulate (or external recordings in
    /// the same format) into per-link metrics.
    Analyze,
    /// Write fidelity/QBER-vs-loss curve CSVs for the configured user
    /// counts and coincidence windows.
    Curves,
    /// Evaluate the asymptotic secure key rate for a raw rate and a QBER
    /// (or a fidelity via the isotropic mapping).
    Keyrate {
        #[arg(long)]
        raw_hz: f64,
        #[arg(long)]
        qber: Option<f64>,
        #[arg(long)]
        fidelity: Option<f64>,
        /// Error-correction inefficiency factor (1 = ideal).
        #[arg(long, default_value_t = 1.0)]
        ec_efficiency: f64,
    },
}

fn require_config(cli: &Cli) -> Result<(config::RunConfigFile, &PathBuf), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    Ok((config::load(path)?, path))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Plan => commands::cmd_plan(&require_config(cli)?.0, &cli.out),
        Command::Simulate => {
            let (cfg, path) = require_config(cli)?;
            commands::cmd_simulate(&cfg, path, cli.seed, &cli.out, cli.blind)
        }
        Command::Analyze => commands::cmd_analyze(&require_config(cli)?.0, &cli.out),
        Command::Curves => commands::cmd_curves(&require_config(cli)?.0, &cli.out),
        Command::Keyrate {
            raw_hz,
            qber,
            fidelity,
            ec_efficiency,
        } => commands::cmd_keyrate(&commands::KeyrateArgs {
            raw_hz: *raw_hz,
            qber: *qber,
            fidelity: *fidelity,
            ec_efficiency: *ec_efficiency,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
