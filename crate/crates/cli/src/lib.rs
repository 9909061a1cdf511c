//! Command-line front end of the `spbp` localization simulator.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "sigma_n2")]
    SigmaN2,
    /// Message-passing iterations per time step.
    #[value(name = "P")]
    P,
    #[value(name = "runs")]
    Runs,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::SigmaN2 => "sigma_n2",
            SweepParam::P => "P",
            SweepParam::Runs => "runs",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "spbp",
    version,
    about = "Sigma point belief propagation localization simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scenario and write logs.csv, rmse.csv and manifest.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in numerical checks.
    Selftest {
        /// Corrupt one sigma point to exercise the failure path.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Re-run the scenario for each value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs one parsed command; returns the closing line to print on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            runs,
            seed,
        } => {
            commands::simulate(&config, &out, runs, seed)?;
            Ok(format!("wrote {}", out.display()))
        }
        Command::Selftest { inject_fault } => {
            let (table, status) = commands::selftest(inject_fault);
            print!("{table}");
            status.map(|_| "all checks passed".to_string())
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            commands::sweep(&config, param, &values, &out)?;
            Ok(format!("wrote {}", out.display()))
        }
    }
}
