//! `arbitrage`: calibrate, route, evaluate and simulate score-gap routers.
//!
//! Exit codes: 0 success, 2 invalid input, 3 infeasible budget, 4 failed
//! assertion.

mod calibrate;
mod evaluate;
mod io;
mod manifest;
mod report;
mod route;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use arbitrage_core::exec::Execution;

#[derive(Parser)]
#[command(name = "arbitrage", version, about = "Risk-controlled routing between a Primary and a Guardian scorer")]
struct Cli {
    /// Worker threads for trials and replications (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit lambda_hat on a calibration record file.
    Calibrate(calibrate::Args),
    /// Route every record at a fixed lambda.
    Route(route::Args),
    /// Repeated calibration/evaluation trials with baselines.
    Evaluate(evaluate::Args),
    /// Synthetic convergence study of the fitted threshold.
    Simulate(simulate::Args),
    /// Render a saved evaluation report.
    Report(report::Args),
}

/// The budget cannot be met at this calibration size or on this grid.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Infeasible(pub String);

/// A requested check (e.g. `--assert-rate`) failed.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct AssertionFailed(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<AssertionFailed>() {
        return 4;
    }
    if err.is::<Infeasible>() {
        return 3;
    }
    match err.downcast_ref::<arbitrage_core::Error>() {
        Some(arbitrage_core::Error::BudgetInfeasible { .. }) => 3,
        _ => 2,
    }
}

fn execution(jobs: Option<usize>) -> anyhow::Result<Execution> {
    match jobs {
        Some(0) => anyhow::bail!("--jobs must be >= 1"),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            Ok(Execution::Parallel)
        }
        _ => Ok(Execution::default()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = execution(cli.jobs)?;
    match cli.command {
        Command::Calibrate(args) => calibrate::run(&args),
        Command::Route(args) => route::run(&args),
        Command::Evaluate(args) => evaluate::run(&args, exec),
        Command::Simulate(args) => simulate::run(&args, exec),
        Command::Report(args) => report::run(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
