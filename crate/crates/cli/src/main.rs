//! Command-line driver for tuned multifidelity Monte Carlo estimation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "acvtune", version, about = "Tuned approximate control variate estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tune, allocate and estimate once.
    Estimate(RunArgs),
    /// Tune the low-fidelity hyperparameters only.
    Tune(RunArgs),
    /// Repeated trials of each solution type at one setting.
    Baseline(RunArgs),
    /// Oracle estimator variance over a hyperparameter grid.
    Grid(RunArgs),
    /// Trials over every budget, pilot size and iteration count.
    Sweep(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory receiving the result files.
    #[arg(short, long, env = "ACVTUNE_OUTPUT", default_value = "acvtune-output")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    n_pilot: Option<usize>,
    #[arg(long)]
    n_iter: Option<usize>,
    /// Allocation scheme: mlmc, mfmc, acv-is, acv-mf, gmf[...] or gmf-search.
    #[arg(long)]
    scheme: Option<String>,
    /// time-of-flight, landing-range or speed-at-reference.
    #[arg(long)]
    qoi: Option<String>,
    /// trajectory or trajectory-1d.
    #[arg(long)]
    benchmark: Option<String>,
    /// Trials per batch.
    #[arg(long)]
    trials: Option<usize>,
    /// Solution types to run; repeatable.
    #[arg(long = "solution")]
    solutions: Vec<String>,
    /// Worker threads; results do not depend on it.
    #[arg(short, long)]
    jobs: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        config.apply(&Overrides {
            seed: self.seed,
            budget: self.budget,
            n_pilot: self.n_pilot,
            n_iter: self.n_iter,
            scheme: self.scheme.clone(),
            qoi: self.qoi.clone(),
            benchmark: self.benchmark.clone(),
            trials: self.trials,
            solutions: self.solutions.clone(),
        })?;
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, args, action): (_, _, fn(&Context) -> Result<(), CliError>) = match &cli.command {
        Command::Estimate(a) => ("estimate", a, commands::estimate),
        Command::Tune(a) => ("tune", a, commands::tune),
        Command::Baseline(a) => ("baseline", a, commands::baseline),
        Command::Grid(a) => ("grid", a, commands::grid),
        Command::Sweep(a) => ("sweep", a, commands::sweep),
    };
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    }
    let ctx = Context {
        command: name,
        config: args.resolve()?,
        output: args.output.clone(),
    };
    action(&ctx)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
