use std::path::PathBuf;

use serde::Serialize;

use arbitrage_core::calibrate::{fit_lambda, profiles, LambdaGrid, RiskBudget};

use crate::io::{self, GuardianView};
use crate::manifest::Recorder;
use crate::Infeasible;

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Calibration records (JSON lines).
    #[arg(long)]
    pub records: PathBuf,
    /// Risk budget.
    #[arg(long)]
    pub alpha: f64,
    /// Upper bound B on the per-instance loss.
    #[arg(long, default_value_t = 1.0)]
    pub loss_bound: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Replace Guardian scores by the correct-answer indicator.
    #[arg(long, conflicts_with = "guardian_from_severity")]
    pub binarize_guardian: bool,
    /// Derive Guardian scores from severity labels.
    #[arg(long)]
    pub guardian_from_severity: bool,
    /// Calibration report (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug, Clone, Copy, Serialize)]
pub struct GridArgs {
    #[arg(long, default_value_t = 0.0)]
    pub grid_start: f64,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    /// Number of grid points (default: enough to reach 1).
    #[arg(long)]
    pub grid_count: Option<usize>,
    /// Extend the grid until every calibration loss reaches zero.
    #[arg(long)]
    pub auto_extend: bool,
}

impl GridArgs {
    pub fn grid(&self) -> anyhow::Result<LambdaGrid> {
        let count = match self.grid_count {
            Some(c) => c,
            None => {
                anyhow::ensure!(
                    self.grid_step > 0.0 && self.grid_start < 1.0,
                    "--grid-count is required unless 0 <= --grid-start < 1 and --grid-step > 0"
                );
                ((1.0 - self.grid_start) / self.grid_step).round() as usize + 1
            }
        };
        Ok(LambdaGrid::new(self.grid_start, self.grid_step, count)?.with_auto_extend(self.auto_extend))
    }
}

pub fn run(args: &Args) -> anyhow::Result<()> {
    let mut rec = Recorder::start("calibrate");
    rec.input(&args.records)?;
    let view = GuardianView::from_flags(args.binarize_guardian, args.guardian_from_severity);
    let instances = io::records(&args.records, view)?;
    let budget = RiskBudget::new(args.alpha, args.loss_bound)?;
    let result = fit_lambda(&profiles(&instances)?, budget, &args.grid.grid()?)?;
    io::write(&args.out, io::json_pretty(&result)?)?;
    rec.finish(args, &[&args.out], &io::manifest_path(&args.out))?;
    if !result.feasible {
        return Err(Infeasible(format!(
            "no grid point up to {} meets alpha = {}; widen the grid or pass --auto-extend",
            result.grid.last(),
            args.alpha
        ))
        .into());
    }
    println!(
        "lambda_hat = {} (grid index {}, empirical risk {}, n = {})",
        result.lambda_hat,
        result.lambda_index,
        result.empirical_risk_at_hat(),
        result.n
    );
    Ok(())
}
