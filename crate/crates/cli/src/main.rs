//! `gpmpc`: config-driven experiments for GP residual models, belief
//! propagation and chance-constrained MPC.
//!
//! Exit codes: 0 ok, 1 i/o failure, 2 config error, 3 numerical failure,
//! 4 capability error.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use crate::commands::CommandRegistry;
use crate::config::LoadedConfig;
use crate::error::CliResult;
use crate::output::Context;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    /// Generate or load data, train hyperparameters, write the model.
    Fit,
    /// Predictive moments at the configured points.
    Predict,
    /// Belief rollouts per method against a Monte-Carlo ensemble.
    Propagate,
    /// Seeded closed-loop MPC episodes and their aggregate.
    MpcSim,
    /// Sparse approximations against the exact GP on fresh data.
    CompareSparse,
}

impl Sub {
    fn name(self) -> &'static str {
        match self {
            Sub::Fit => "fit",
            Sub::Predict => "predict",
            Sub::Propagate => "propagate",
            Sub::MpcSim => "mpc-sim",
            Sub::CompareSparse => "compare-sparse",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gpmpc", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for episode-level parallelism.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    #[arg(long)]
    verbose: bool,
}

fn run(cli: &Cli) -> CliResult<()> {
    let loaded = LoadedConfig::load(&cli.config)?;
    let out = match (&cli.out, &loaded.config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => loaded.resolve(o),
        (None, None) => PathBuf::from("out"),
    };
    let ctx = Context {
        loaded,
        out,
        jobs: cli.jobs as usize,
        verbose: cli.verbose,
    };
    let registry = CommandRegistry::default();
    registry.get(cli.command.name())?.run(&ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gpmpc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
