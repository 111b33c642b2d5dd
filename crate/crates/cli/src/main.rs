use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;

use config::{Mode, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Capacity(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "qnet", version, about = "Excitation transfer through dipole-coupled networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Population dynamics and transfer time of one network.
    Simulate(Common),
    /// Bayesian optimization of the transfer time at fixed Γ.
    Optimize(Common),
    /// One optimization per value of 1/Γ.
    GammaScan(Common),
    /// Fastest classical hopping paths.
    Classical(Common),
    /// Merge the outputs found under a directory into summary tables.
    Report(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    /// `section.key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue existing ledgers in the output directory (optimize only).
    #[arg(long)]
    resume: bool,
}

fn load(mode: Mode, c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(c.config.as_deref(), &c.overrides)?;
    if let Some(m) = cfg.mode {
        if m != mode {
            return Err(CliError::Validation(vec![format!("config mode is {m:?} but the command is {mode:?}")]));
        }
    }
    cfg.mode = Some(mode);
    if let Some(s) = c.seed {
        cfg.optimizer.seed = s;
    }
    if let Some(r) = c.restarts {
        cfg.optimizer.restarts = r;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    let problems = cfg.check();
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&load(Mode::Simulate, &c)?),
        Command::Optimize(c) => commands::optimize(&load(Mode::Optimize, &c)?, c.resume),
        Command::GammaScan(c) => commands::gamma_scan(&load(Mode::GammaScan, &c)?),
        Command::Classical(c) => commands::classical(&load(Mode::Classical, &c)?),
        Command::Report(c) => commands::report(&load(Mode::Report, &c)?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qnet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
