use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use arbitrage_core::calibrate::LambdaGrid;
use arbitrage_core::exec::Execution;
use arbitrage_core::theory::{convergence_study, ConvergenceConfig, ConvergenceReport, SyntheticFamily};

use crate::io;
use crate::manifest::Recorder;
use crate::AssertionFailed;

/// Breakpoint distribution: `uniform` or `beta:A,B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Family {
    pub a: f64,
    pub b: f64,
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "uniform" {
            return Ok(Self { a: 1.0, b: 1.0 });
        }
        let params = s
            .strip_prefix("beta:")
            .ok_or_else(|| format!("expected `uniform` or `beta:A,B`, got `{s}`"))?;
        let (a, b) = params
            .split_once(',')
            .ok_or_else(|| format!("expected `beta:A,B`, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        Ok(Self {
            a: parse(a)?,
            b: parse(b)?,
        })
    }
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    /// Calibration sizes, comma separated and increasing.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800")]
    pub n_list: Vec<usize>,
    /// Replications per calibration size.
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value = "uniform")]
    pub family: Family,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub loss_bound: f64,
    /// Threshold grid step (default: lambda_max / 100000).
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Fail with exit code 4 unless the fitted regret slope is <= --max-slope.
    #[arg(long)]
    pub assert_rate: bool,
    #[arg(long, default_value_t = -0.8, allow_hyphen_values = true)]
    pub max_slope: f64,
    /// Directory for convergence.csv, convergence.json and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

const CSV_COLUMNS: [&str; 7] = [
    "n",
    "mean_regret",
    "regret_se",
    "mean_risk",
    "risk_se",
    "mean_lambda_hat",
    "risk_lower_bound",
];

fn csv_rows(report: &ConvergenceReport, loss_bound: f64) -> Vec<Vec<String>> {
    report
        .points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                p.mean_regret.to_string(),
                p.regret_se.to_string(),
                p.mean_risk.to_string(),
                p.risk_se.to_string(),
                p.mean_lambda_hat.to_string(),
                (report.alpha - 2.0 * loss_bound / (p.n as f64 + 1.0)).to_string(),
            ]
        })
        .collect()
}

pub fn run(args: &Args, exec: Execution) -> anyhow::Result<()> {
    let mut rec = Recorder::start("simulate");
    rec.seed(args.seed);
    let family = SyntheticFamily::beta(args.family.a, args.family.b)?
        .with_lambda_max(args.lambda_max)?
        .with_loss_bound(args.loss_bound)?;
    let grid = match args.grid_step {
        Some(step) => Some(LambdaGrid::new(0.0, step, (args.lambda_max / step).ceil() as usize + 1)?),
        None => None,
    };
    let config = ConvergenceConfig {
        alpha: args.alpha,
        n_list: args.n_list.clone(),
        reps: args.reps,
        seed: args.seed,
        grid,
        execution: exec,
    };
    let report = convergence_study(&family, &config)?;

    let csv_path = args.out_dir.join("convergence.csv");
    let json_path = args.out_dir.join("convergence.json");
    io::write(&csv_path, io::csv_text(&CSV_COLUMNS, &csv_rows(&report, args.loss_bound))?)?;
    io::write(&json_path, io::json_pretty(&report)?)?;
    rec.finish(args, &[&csv_path, &json_path], &args.out_dir.join("manifest.json"))?;

    println!("lambda* = {}, grid slack = {:e}", report.lambda_star, report.grid_slack);
    for p in &report.points {
        println!(
            "n = {:>6}  regret = {:.3e} ± {:.1e}  risk = {:.4} ± {:.1e}",
            p.n, p.mean_regret, p.regret_se, p.mean_risk, p.risk_se
        );
    }
    match report.slope {
        Some(s) => println!("log-log slope = {s:.3}"),
        None => println!("log-log slope unavailable (some mean regret is not positive)"),
    }
    if !args.assert_rate {
        return Ok(());
    }
    match report.rate_holds(args.max_slope) {
        Some(true) => Ok(()),
        Some(false) => Err(AssertionFailed(format!(
            "regret slope {:.3} exceeds {}",
            report.slope.unwrap_or(f64::NAN),
            args.max_slope
        ))
        .into()),
        None => {
            eprintln!(
                "warning: rate assertion unavailable (needs --reps >= {} and positive mean regrets)",
                arbitrage_core::theory::MIN_REPS_FOR_RATE
            );
            Ok(())
        }
    }
}
