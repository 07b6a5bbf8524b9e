use std::path::PathBuf;

use serde::Serialize;

use arbitrage_core::cost::routed_cost;
use arbitrage_core::providers::{GuardianSource, Replay, RemoteScorer, ScorerEndpoint};
use arbitrage_core::route::{decide_with, Actor, RoutingPolicy, Variant};

use crate::io::{self, GuardianView};
use crate::manifest::Recorder;

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    /// Records to route (JSON lines).
    #[arg(long)]
    pub records: PathBuf,
    /// Calibrated threshold.
    #[arg(long)]
    pub lambda: f64,
    /// Let the Guardian choose among all actions when it is consulted.
    #[arg(long)]
    pub unrestricted: bool,
    /// Price sheet for per-record costs.
    #[arg(long, env = "ARBITRAGE_PRICE_SHEET")]
    pub price_sheet: Option<PathBuf>,
    /// Fetch Guardian scores from this endpoint instead of the records.
    #[arg(long)]
    pub scorer_url: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub scorer_timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    pub scorer_retries: u32,
    /// Decisions (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct DecisionLine<'a> {
    id: &'a str,
    chosen_index: usize,
    chosen_action: &'a str,
    actor: Actor,
    candidate_count: usize,
    deferred: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost_picos: Option<u128>,
}

pub fn run(args: &Args) -> anyhow::Result<()> {
    let mut rec = Recorder::start("route");
    rec.input(&args.records)?;
    if let Some(p) = &args.price_sheet {
        rec.input(p)?;
    }
    let instances = io::records(&args.records, GuardianView::AsRecorded)?;
    let prices = io::prices(args.price_sheet.as_deref())?;
    let variant = if args.unrestricted {
        Variant::Unrestricted
    } else {
        Variant::Restricted
    };
    let policy = RoutingPolicy::new(args.lambda, variant)?;
    let remote = match &args.scorer_url {
        Some(url) => Some(RemoteScorer::new(ScorerEndpoint::new(
            url.clone(),
            args.scorer_timeout_ms,
            args.scorer_retries,
        )?)),
        None => None,
    };
    let source: &dyn GuardianSource = match &remote {
        Some(r) => r,
        None => &Replay,
    };

    let mut out = String::new();
    let (mut deferred, mut total_picos) = (0usize, 0u128);
    for inst in &instances {
        let d = decide_with(inst, &policy, |i| source.guardian_scores(i))?;
        let cost = match (&prices, inst.tokens()) {
            (Some(p), Some(t)) => Some(routed_cost(t, p, &d)?),
            _ => None,
        };
        deferred += usize::from(d.deferred);
        total_picos += cost.map_or(0, |c| c.picos());
        let line = DecisionLine {
            id: inst.id(),
            chosen_index: d.chosen_index,
            chosen_action: &inst.actions()[d.chosen_index],
            actor: d.actor,
            candidate_count: d.candidate_count,
            deferred: d.deferred,
            cost: cost.map(|c| c.dollars()),
            cost_picos: cost.map(|c| c.picos()),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    io::write(&args.out, out)?;
    rec.finish(args, &[&args.out], &io::manifest_path(&args.out))?;
    println!(
        "routed {} records, {} deferred to the Guardian{}",
        instances.len(),
        deferred,
        if prices.is_some() {
            format!(", total cost ${:.6}", total_picos as f64 / 1e12)
        } else {
            String::new()
        }
    );
    Ok(())
}
