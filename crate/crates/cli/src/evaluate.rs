use std::path::PathBuf;

use clap::ValueEnum;
use serde::Serialize;

use arbitrage_core::eval::{
    run_trials, GuardrailMetric, MetricSpec, SplitMode, TrialConfig, UtilityMetric, TABLE_COLUMNS,
};
use arbitrage_core::exec::Execution;
use arbitrage_core::route::Variant;

use crate::calibrate::GridArgs;
use crate::io::{self, GuardianView};
use crate::manifest::Recorder;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Utility {
    Accuracy,
    HelpfulMatch,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum Guardrail {
    ResidualLoss,
    Severity,
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Scored records (JSON lines).
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    #[arg(long)]
    pub calib_size: usize,
    /// Evaluation items per trial (default: all remaining).
    #[arg(long)]
    pub eval_size: Option<usize>,
    /// Risk budgets, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub loss_bound: f64,
    #[arg(long, default_value_t = 0.0)]
    pub grid_start: f64,
    #[arg(long, default_value_t = 0.001)]
    pub grid_step: f64,
    #[arg(long)]
    pub grid_count: Option<usize>,
    /// Keep the grid fixed instead of extending it to cover every loss.
    #[arg(long)]
    pub no_auto_extend: bool,
    /// Let the Guardian choose among all actions when consulted.
    #[arg(long)]
    pub unrestricted: bool,
    /// Draw equal shares per value of this metadata field.
    #[arg(long, conflicts_with = "exhaustive")]
    pub stratify_key: Option<String>,
    /// Enumerate every calibration subset instead of sampling trials.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long, env = "ARBITRAGE_PRICE_SHEET")]
    pub price_sheet: Option<PathBuf>,
    /// Add random-router baselines: one cost-matched per alpha plus fixed-q routers.
    #[arg(long)]
    pub baselines: bool,
    /// Guardian probabilities of the fixed random routers.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.5,0.6,0.8")]
    pub fixed_q: Vec<f64>,
    #[arg(long, conflicts_with = "guardian_from_severity")]
    pub binarize_guardian: bool,
    #[arg(long)]
    pub guardian_from_severity: bool,
    #[arg(long, value_enum, default_value_t = Utility::Accuracy)]
    pub utility: Utility,
    #[arg(long, value_enum, default_value_t = Guardrail::ResidualLoss)]
    pub guardrail: Guardrail,
    /// Directory for report.csv, report.json, frontier.json and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl Args {
    fn config(&self, exec: Execution) -> anyhow::Result<TrialConfig> {
        let grid = GridArgs {
            grid_start: self.grid_start,
            grid_step: self.grid_step,
            grid_count: self.grid_count,
            auto_extend: !self.no_auto_extend,
        }
        .grid()?;
        let split = match (&self.stratify_key, self.exhaustive) {
            (_, true) => SplitMode::Exhaustive,
            (Some(key), _) => SplitMode::Stratified { key: key.clone() },
            _ => SplitMode::Uniform,
        };
        Ok(TrialConfig {
            trials: self.trials,
            calib_size: self.calib_size,
            eval_size: self.eval_size,
            alphas: self.alphas.clone(),
            loss_bound: self.loss_bound,
            grid,
            variant: if self.unrestricted {
                Variant::Unrestricted
            } else {
                Variant::Restricted
            },
            seed: self.seed,
            split,
            metrics: MetricSpec {
                utility: match self.utility {
                    Utility::Accuracy => UtilityMetric::Accuracy,
                    Utility::HelpfulMatch => UtilityMetric::HelpfulMatch,
                },
                guardrail: match self.guardrail {
                    Guardrail::ResidualLoss => GuardrailMetric::ResidualLoss,
                    Guardrail::Severity => GuardrailMetric::Severity,
                },
                prices: io::prices(self.price_sheet.as_deref())?,
            },
            cost_matched: self.baselines,
            fixed_q: if self.baselines { self.fixed_q.clone() } else { Vec::new() },
            execution: exec,
        })
    }
}

pub fn run(args: &Args, exec: Execution) -> anyhow::Result<()> {
    let mut rec = Recorder::start("evaluate");
    rec.input(&args.records)?;
    if let Some(p) = &args.price_sheet {
        rec.input(p)?;
    }
    rec.seed(args.seed);
    let view = GuardianView::from_flags(args.binarize_guardian, args.guardian_from_severity);
    let dataset = io::records(&args.records, view)?;
    let config = args.config(exec)?;
    let report = run_trials(&dataset, &config)?;

    let csv_path = args.out_dir.join("report.csv");
    let json_path = args.out_dir.join("report.json");
    let frontier_path = args.out_dir.join("frontier.json");
    io::write(&csv_path, io::csv_text(&TABLE_COLUMNS, &report.table_rows())?)?;
    io::write(&json_path, io::json_pretty(&report)?)?;
    io::write(&frontier_path, io::json_pretty(&report.frontier())?)?;
    rec.finish(
        &config,
        &[&csv_path, &json_path, &frontier_path],
        &args.out_dir.join("manifest.json"),
    )?;

    print!("{}", crate::report::render(&report));
    for c in &report.diagnostics.infeasible {
        eprintln!(
            "warning: alpha = {} was not met on the grid in {} of {} trials; those trials are excluded",
            c.alpha, c.trials, report.trials
        );
    }
    Ok(())
}
