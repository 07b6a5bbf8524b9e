//! Per-decision utility, guardrail and cost metrics.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::cost::{routed_cost, single_cost, Cost, Model, PriceSheet};
use crate::route::RoutingDecision;
use crate::scores::ScoredInstance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMetric {
    /// Chosen action equals `correct_index`.
    #[default]
    Accuracy,
    /// Chosen action equals `helpful_index`.
    HelpfulMatch,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardrailMetric {
    /// Best Guardian score minus the Guardian score of the chosen action.
    #[default]
    ResidualLoss,
    /// Severity of the chosen action minus the smallest severity.
    Severity,
}

/// What to measure for each routed instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub utility: UtilityMetric,
    pub guardrail: GuardrailMetric,
    /// Costs are reported only when prices are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<PriceSheet>,
}

fn label(instance: &ScoredInstance, value: Option<usize>, name: &'static str) -> Result<usize> {
    value.ok_or_else(|| Error::MissingLabel {
        id: instance.id().to_owned(),
        label: name,
    })
}

pub fn utility_value(metric: UtilityMetric, instance: &ScoredInstance, chosen: usize) -> Result<f64> {
    let target = match metric {
        UtilityMetric::Accuracy => label(instance, instance.labels().correct_index, "correct_index")?,
        UtilityMetric::HelpfulMatch => label(instance, instance.labels().helpful_index, "helpful_index")?,
    };
    Ok(if chosen == target { 1.0 } else { 0.0 })
}

pub fn guardrail_value(metric: GuardrailMetric, instance: &ScoredInstance, chosen: usize) -> Result<f64> {
    match metric {
        GuardrailMetric::ResidualLoss => {
            let g = instance.require_guardian()?;
            Ok(g.max() - g.values()[chosen])
        }
        GuardrailMetric::Severity => {
            let sev = instance
                .labels()
                .severities
                .as_ref()
                .ok_or_else(|| Error::MissingLabel {
                    id: instance.id().to_owned(),
                    label: "severities",
                })?;
            let min = sev.iter().copied().min().unwrap_or(0);
            Ok(f64::from(sev[chosen] - min))
        }
    }
}

fn mean_over<I, F>(decisions: &[RoutingDecision], instances: &[I], f: F) -> Result<f64>
where
    I: Borrow<ScoredInstance>,
    F: Fn(&ScoredInstance, usize) -> Result<f64>,
{
    if decisions.len() != instances.len() {
        return Err(Error::invalid(format!(
            "{} decisions for {} instances",
            decisions.len(),
            instances.len()
        )));
    }
    if decisions.is_empty() {
        return Err(Error::invalid("no decisions to score"));
    }
    let mut total = 0.0;
    for (d, inst) in decisions.iter().zip(instances) {
        total += f(inst.borrow(), d.chosen_index)?;
    }
    Ok(total / decisions.len() as f64)
}

/// Fraction of decisions that pick `correct_index`.
pub fn accuracy_metric<I: Borrow<ScoredInstance>>(decisions: &[RoutingDecision], instances: &[I]) -> Result<f64> {
    mean_over(decisions, instances, |inst, c| utility_value(UtilityMetric::Accuracy, inst, c))
}

/// Fraction of decisions that pick `helpful_index`.
pub fn helpful_match_metric<I: Borrow<ScoredInstance>>(
    decisions: &[RoutingDecision],
    instances: &[I],
) -> Result<f64> {
    mean_over(decisions, instances, |inst, c| utility_value(UtilityMetric::HelpfulMatch, inst, c))
}

/// Mean excess severity of the chosen actions.
pub fn severity_loss_metric<I: Borrow<ScoredInstance>>(
    decisions: &[RoutingDecision],
    instances: &[I],
) -> Result<f64> {
    mean_over(decisions, instances, |inst, c| guardrail_value(GuardrailMetric::Severity, inst, c))
}

/// Mean shortfall of the chosen action's Guardian score from the best one.
pub fn residual_loss_metric<I: Borrow<ScoredInstance>>(
    decisions: &[RoutingDecision],
    instances: &[I],
) -> Result<f64> {
    mean_over(decisions, instances, |inst, c| guardrail_value(GuardrailMetric::ResidualLoss, inst, c))
}

/// How a decision is billed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Billing {
    PrimaryOnly,
    GuardianOnly,
    Routed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Outcome {
    pub utility: f64,
    pub guardrail: f64,
    pub cost: Option<Cost>,
}

impl MetricSpec {
    pub(crate) fn outcome(
        &self,
        instance: &ScoredInstance,
        decision: &RoutingDecision,
        billing: Billing,
    ) -> Result<Outcome> {
        let cost = match &self.prices {
            None => None,
            Some(prices) => {
                let tokens = instance.tokens().ok_or(Error::MissingTokens { field: "tokens" })?;
                Some(match billing {
                    Billing::PrimaryOnly => single_cost(tokens, prices, Model::Primary)?,
                    Billing::GuardianOnly => single_cost(tokens, prices, Model::Guardian)?,
                    Billing::Routed => routed_cost(tokens, prices, decision)?,
                })
            }
        };
        Ok(Outcome {
            utility: utility_value(self.utility, instance, decision.chosen_index)?,
            guardrail: guardrail_value(self.guardrail, instance, decision.chosen_index)?,
            cost,
        })
    }
}

/// Per-round means of one policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Round {
    pub utility: f64,
    pub guardrail: f64,
    pub cost_per_1000: Option<f64>,
    pub guardian_pct: f64,
}

/// Running sums over one round, accumulated in instance order.
#[derive(Debug, Clone)]
pub(crate) struct Tally {
    count: usize,
    utility: f64,
    guardrail: f64,
    cost: Option<Cost>,
    deferred: usize,
}

impl Tally {
    pub fn new(spec: &MetricSpec) -> Self {
        Self {
            count: 0,
            utility: 0.0,
            guardrail: 0.0,
            cost: spec.prices.map(|_| Cost::ZERO),
            deferred: 0,
        }
    }

    pub fn add(&mut self, outcome: &Outcome, deferred: bool) {
        self.count += 1;
        self.utility += outcome.utility;
        self.guardrail += outcome.guardrail;
        if let (Some(total), Some(c)) = (self.cost.as_mut(), outcome.cost) {
            *total += c;
        }
        self.deferred += usize::from(deferred);
    }

    pub fn finish(&self) -> Round {
        let n = self.count as f64;
        Round {
            utility: self.utility / n,
            guardrail: self.guardrail / n,
            cost_per_1000: self.cost.map(|c| per_thousand(c, self.count)),
            guardian_pct: 100.0 * self.deferred as f64 / n,
        }
    }
}

/// Average dollars per 1000 questions.
pub(crate) fn per_thousand(total: Cost, count: usize) -> f64 {
    total.dollars() / count as f64 * 1000.0
}
