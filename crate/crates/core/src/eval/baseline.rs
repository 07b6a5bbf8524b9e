//! Random routers: each question goes to the Guardian with probability `q`,
//! independently per question and per trial.

use std::borrow::Borrow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricSpec, Outcome, Round, Tally};
use super::report::Stat;
use super::{prepare_outcomes, Endpoints};
use crate::exec::stream_rng;
use crate::scores::ScoredInstance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterMetrics {
    pub q: f64,
    pub trials: usize,
    pub utility: Stat,
    pub guardrail: Stat,
    /// Dollars per 1000 questions.
    pub cost_per_1000: Option<Stat>,
    pub guardian_pct: Stat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatchedRouter {
    pub target_cost: f64,
    pub primary_cost: f64,
    pub guardian_cost: f64,
    pub metrics: RouterMetrics,
}

fn check_q(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::invalid(format!("routing probability must lie in [0, 1], got {q}")))
    }
}

/// Solves `q * guardian + (1 - q) * primary = target`.
pub fn cost_matched_q(primary_cost: f64, guardian_cost: f64, target: f64) -> Result<f64> {
    let (lo, hi) = if primary_cost <= guardian_cost {
        (primary_cost, guardian_cost)
    } else {
        (guardian_cost, primary_cost)
    };
    if !(target >= lo && target <= hi) {
        return Err(Error::invalid(format!(
            "target cost {target} lies outside [{lo}, {hi}]"
        )));
    }
    if guardian_cost == primary_cost {
        return Ok(0.0);
    }
    Ok(((target - primary_cost) / (guardian_cost - primary_cost)).clamp(0.0, 1.0))
}

/// One round of the random router over `(primary, guardian)` outcome pairs.
pub(crate) fn mix<'a, R, I>(pairs: I, q: f64, spec: &MetricSpec, rng: &mut R) -> Round
where
    R: Rng + ?Sized,
    I: IntoIterator<Item = (&'a Outcome, &'a Outcome)>,
{
    let mut tally = Tally::new(spec);
    for (primary, guardian) in pairs {
        if rng.random::<f64>() < q {
            tally.add(guardian, true);
        } else {
            tally.add(primary, false);
        }
    }
    tally.finish()
}

fn summarize(q: f64, rounds: &[Round]) -> RouterMetrics {
    let col = |f: fn(&Round) -> f64| Stat::of(&rounds.iter().map(f).collect::<Vec<_>>()).expect("trials >= 1");
    let costs: Option<Vec<f64>> = rounds.iter().map(|r| r.cost_per_1000).collect();
    RouterMetrics {
        q,
        trials: rounds.len(),
        utility: col(|r| r.utility),
        guardrail: col(|r| r.guardrail),
        cost_per_1000: costs.and_then(|c| Stat::of(&c)),
        guardian_pct: col(|r| r.guardian_pct),
    }
}

fn run_fixed(outcomes: &[Endpoints], q: f64, trials: usize, seed: u64, spec: &MetricSpec) -> RouterMetrics {
    let rounds: Vec<Round> = (0..trials)
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            mix(outcomes.iter().map(|e| (&e.primary, &e.guardian)), q, spec, &mut rng)
        })
        .collect();
    summarize(q, &rounds)
}

/// Routes every instance of `dataset` to the Guardian with probability `q`,
/// `trials` times.
pub fn random_router_fixed<I: Borrow<ScoredInstance>>(
    dataset: &[I],
    q: f64,
    trials: usize,
    seed: u64,
    spec: &MetricSpec,
) -> Result<RouterMetrics> {
    check_q(q)?;
    if trials == 0 || dataset.is_empty() {
        return Err(Error::invalid("random router needs trials >= 1 and a non-empty dataset"));
    }
    let outcomes = prepare_outcomes(dataset, spec)?;
    Ok(run_fixed(&outcomes, q, trials, seed, spec))
}

/// Random router whose expected cost equals `target_cost` (dollars per 1000
/// questions); `q` comes from the average Primary-only and Guardian-only
/// costs over `dataset`.
pub fn random_router_cost_matched<I: Borrow<ScoredInstance>>(
    dataset: &[I],
    target_cost: f64,
    trials: usize,
    seed: u64,
    spec: &MetricSpec,
) -> Result<CostMatchedRouter> {
    if spec.prices.is_none() {
        return Err(Error::invalid("cost matching needs a price sheet"));
    }
    if trials == 0 || dataset.is_empty() {
        return Err(Error::invalid("random router needs trials >= 1 and a non-empty dataset"));
    }
    let outcomes = prepare_outcomes(dataset, spec)?;
    let mut primary = Tally::new(spec);
    let mut guardian = Tally::new(spec);
    for e in &outcomes {
        primary.add(&e.primary, false);
        guardian.add(&e.guardian, true);
    }
    let primary_cost = primary.finish().cost_per_1000.expect("prices present");
    let guardian_cost = guardian.finish().cost_per_1000.expect("prices present");
    let q = cost_matched_q(primary_cost, guardian_cost, target_cost)?;
    Ok(CostMatchedRouter {
        target_cost,
        primary_cost,
        guardian_cost,
        metrics: run_fixed(&outcomes, q, trials, seed, spec),
    })
}
