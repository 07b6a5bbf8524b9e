use std::fmt::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;

use arbitrage_core::eval::{Stat, TrialReport, TABLE_COLUMNS};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// `report.json` written by `evaluate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

fn pm(s: Stat) -> String {
    format!("{:.3} ± {:.3}", s.mean, s.std)
}

/// Fixed-width summary with `mean ± std` cells.
pub fn render(report: &TrialReport) -> String {
    let header = ["policy", "utility", "guardrail", "cost/1000", "lambda", "delta", "guardian %"];
    let rows: Vec<[String; 7]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.policy.clone(),
                pm(r.utility),
                pm(r.guardrail),
                r.cost_per_1000.map(pm).unwrap_or_else(|| "-".into()),
                r.lambda_hat.map(pm).unwrap_or_else(|| "-".into()),
                r.delta.map(|d| format!("{:+.3}", d.mean)).unwrap_or_else(|| "-".into()),
                format!("{:.1} ± {:.1}", r.guardian_pct.mean, r.guardian_pct.std),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header);
    for r in &rows {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let _ = writeln!(
        out,
        "{} trials, n = {}, evaluation size {}, seed {}",
        report.trials, report.calib_size, report.eval_size, report.seed
    );
    out
}

pub fn run(args: &Args) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report: TrialReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.input.display()))?;
    match args.format {
        Format::Table => print!("{}", render(&report)),
        Format::Csv => print!("{}", crate::io::csv_text(&TABLE_COLUMNS, &report.table_rows())?),
    }
    Ok(())
}
