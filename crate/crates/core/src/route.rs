//! Deployment-time routing.
//!
//! [`decide`] forms the candidate set at the calibrated `lambda_hat`; a
//! singleton set means the Primary acts, otherwise the Guardian chooses from
//! the set (restricted) or from every action (unrestricted).
//! [`gap_route`] is the plain score-gap router: act when the gap is at least
//! `lambda`, defer otherwise. The two disagree only when the gap equals
//! `lambda` (up to [`MEMBERSHIP_EPS`](crate::scores::MEMBERSHIP_EPS)).

use serde::{Deserialize, Serialize};

use crate::scores::{argmax_over, candidate_set, gap_reaches, score_gap, ScoreVector, ScoredInstance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Restricted,
    Unrestricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Primary,
    Guardian,
}

/// Guardian ties always break to the lowest action index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub lambda_hat: f64,
    pub variant: Variant,
}

impl RoutingPolicy {
    pub fn new(lambda_hat: f64, variant: Variant) -> Result<Self> {
        if !(lambda_hat.is_finite() && lambda_hat >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda_hat must be finite and >= 0, got {lambda_hat}"
            )));
        }
        Ok(Self { lambda_hat, variant })
    }

    pub fn restricted(lambda_hat: f64) -> Result<Self> {
        Self::new(lambda_hat, Variant::Restricted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub chosen_index: usize,
    pub actor: Actor,
    /// Size of the candidate set at `lambda_hat`.
    pub candidate_count: usize,
    pub deferred: bool,
    /// Number of options shown to the Guardian (0 when not deferred).
    pub menu_size: usize,
    pub action_count: usize,
}

impl RoutingDecision {
    /// The Primary's argmax, Guardian never consulted.
    pub fn primary_only(instance: &ScoredInstance) -> Self {
        Self {
            chosen_index: instance.primary().argmax(),
            actor: Actor::Primary,
            candidate_count: 1,
            deferred: false,
            menu_size: 0,
            action_count: instance.action_count(),
        }
    }

    /// The Guardian's argmax over all actions.
    pub fn guardian_only(instance: &ScoredInstance) -> Result<Self> {
        let n = instance.action_count();
        Ok(Self {
            chosen_index: instance.require_guardian()?.argmax(),
            actor: Actor::Guardian,
            candidate_count: n,
            deferred: true,
            menu_size: n,
            action_count: n,
        })
    }
}

/// Routes with the instance's own Guardian scores.
pub fn decide(instance: &ScoredInstance, policy: &RoutingPolicy) -> Result<RoutingDecision> {
    decide_with(instance, policy, |inst| inst.require_guardian().cloned())
}

/// Routes, calling `guardian` only when the instance is deferred.
pub fn decide_with<F>(instance: &ScoredInstance, policy: &RoutingPolicy, guardian: F) -> Result<RoutingDecision>
where
    F: FnOnce(&ScoredInstance) -> Result<ScoreVector>,
{
    let set = candidate_set(instance.primary(), policy.lambda_hat)?;
    let n = instance.action_count();
    if set.is_singleton() {
        return Ok(RoutingDecision {
            chosen_index: set.indices()[0],
            actor: Actor::Primary,
            candidate_count: 1,
            deferred: false,
            menu_size: 0,
            action_count: n,
        });
    }
    let scores = guardian(instance)?;
    if scores.len() != n {
        return Err(Error::invalid(format!(
            "instance `{}`: guardian returned {} scores for {n} actions",
            instance.id(),
            scores.len()
        )));
    }
    let (chosen_index, menu_size) = match policy.variant {
        Variant::Restricted => (argmax_over(scores.values(), set.indices().iter().copied()), set.len()),
        Variant::Unrestricted => (argmax_over(scores.values(), 0..n), n),
    };
    Ok(RoutingDecision {
        chosen_index,
        actor: Actor::Guardian,
        candidate_count: set.len(),
        deferred: true,
        menu_size,
        action_count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum GapRoute {
    Act(usize),
    Defer,
}

/// Acts with the Primary argmax iff the score gap is at least `lambda`.
pub fn gap_route(primary: &ScoreVector, lambda: f64) -> GapRoute {
    if gap_reaches(score_gap(primary), lambda) {
        GapRoute::Act(primary.argmax())
    } else {
        GapRoute::Defer
    }
}
