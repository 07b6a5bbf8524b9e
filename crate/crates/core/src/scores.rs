//! Score vectors, candidate sets, score gaps and the residual-risk loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cost::TokenCounts;
use crate::{Error, Result};

/// Tolerance on candidate-set membership. An action belongs to the
/// `lambda`-relaxed set when `max p - p(a) <= lambda + MEMBERSHIP_EPS`, so
/// analytically tied scores are never dropped by rounding noise.
pub const MEMBERSHIP_EPS: f64 = 1e-12;

const NORMALIZED_TOL: f64 = 1e-9;

/// Per-action scores of one model for one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector {
    values: Vec<f64>,
    normalized: bool,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("score vector must not be empty"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("score {bad} is not finite")));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Uniform distribution over `len` actions.
    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("score vector must not be empty"));
        }
        Ok(Self {
            values: vec![1.0 / len as f64; len],
            normalized: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max - min`; beyond this relaxation every action is a candidate.
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    /// First index attaining the maximum.
    pub fn argmax(&self) -> usize {
        argmax_over(&self.values, 0..self.values.len())
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(v: ScoreVector) -> Self {
        v.values
    }
}

/// Lowest index among `indices` attaining the maximum of `values`.
pub(crate) fn argmax_over(values: &[f64], indices: impl IntoIterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for i in indices {
        match best {
            Some(b) if values[i] <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("argmax over an empty index set")
}

/// Optional ground truth attached to an instance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severities: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helpful_index: Option<usize>,
}

impl Labels {
    pub fn is_empty(&self) -> bool {
        self.correct_index.is_none() && self.severities.is_none() && self.helpful_index.is_none()
    }
}

/// One context with its actions and both models' scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredInstance {
    id: String,
    actions: Vec<String>,
    primary_scores: ScoreVector,
    guardian_scores: Option<ScoreVector>,
    labels: Labels,
    tokens: Option<TokenCounts>,
    meta: BTreeMap<String, String>,
}

impl ScoredInstance {
    pub fn new(
        id: impl Into<String>,
        actions: Vec<String>,
        primary_scores: ScoreVector,
        guardian_scores: Option<ScoreVector>,
    ) -> Result<Self> {
        let inst = Self::new_unchecked(id.into(), actions, primary_scores, guardian_scores);
        inst.validate()?;
        Ok(inst)
    }

    pub(crate) fn new_unchecked(
        id: String,
        actions: Vec<String>,
        primary_scores: ScoreVector,
        guardian_scores: Option<ScoreVector>,
    ) -> Self {
        Self {
            id,
            actions,
            primary_scores,
            guardian_scores,
            labels: Labels::default(),
            tokens: None,
            meta: BTreeMap::new(),
        }
    }

    pub(crate) fn set_labels(&mut self, labels: Labels) {
        self.labels = labels;
    }

    /// Convenience constructor naming actions `a0, a1, ...`.
    pub fn from_scores(id: impl Into<String>, primary: &[f64], guardian: &[f64]) -> Result<Self> {
        let actions = (0..primary.len()).map(|i| format!("a{i}")).collect();
        Self::new(
            id,
            actions,
            ScoreVector::new(primary.to_vec())?,
            Some(ScoreVector::new(guardian.to_vec())?),
        )
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        self.labels = labels;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tokens(mut self, tokens: TokenCounts) -> Self {
        self.tokens = Some(tokens);
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn with_guardian(mut self, guardian: ScoreVector) -> Result<Self> {
        self.guardian_scores = Some(guardian);
        self.validate()?;
        Ok(self)
    }

    /// Checks the length and label invariants, reporting the offending field.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(field, message)| {
            Error::invalid(format!("instance `{}`: {field}: {message}", self.id))
        })
    }

    pub(crate) fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let n = self.actions.len();
        if n == 0 {
            return Err(("actions", "at least one action is required".into()));
        }
        if self.primary_scores.len() != n {
            return Err((
                "primary_scores",
                format!("{} scores for {n} actions", self.primary_scores.len()),
            ));
        }
        if let Some(g) = &self.guardian_scores {
            if g.len() != n {
                return Err(("guardian_scores", format!("{} scores for {n} actions", g.len())));
            }
        }
        if let Some(c) = self.labels.correct_index {
            if c >= n {
                return Err(("labels.correct_index", format!("{c} out of range for {n} actions")));
            }
        }
        if let Some(h) = self.labels.helpful_index {
            if h >= n {
                return Err(("labels.helpful_index", format!("{h} out of range for {n} actions")));
            }
        }
        if let Some(sev) = &self.labels.severities {
            if sev.len() != n {
                return Err(("labels.severities", format!("{} severities for {n} actions", sev.len())));
            }
            if let Some(s) = sev.iter().find(|&&s| s > 3) {
                return Err(("labels.severities", format!("severity {s} outside 0..=3")));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn primary(&self) -> &ScoreVector {
        &self.primary_scores
    }

    pub fn guardian(&self) -> Option<&ScoreVector> {
        self.guardian_scores.as_ref()
    }

    pub fn require_guardian(&self) -> Result<&ScoreVector> {
        self.guardian_scores.as_ref().ok_or_else(|| Error::MissingGuardian {
            id: self.id.clone(),
        })
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn tokens(&self) -> Option<&TokenCounts> {
        self.tokens.as_ref()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// Precomputes the residual-loss step function of this instance.
    pub fn loss_profile(&self) -> Result<LossProfile> {
        Ok(LossProfile::new(&self.primary_scores, self.require_guardian()?))
    }
}

/// Actions whose Primary score lies within `lambda` of the top score.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    indices: Vec<usize>,
    lambda_used: f64,
}

impl CandidateSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn lambda_used(&self) -> f64 {
        self.lambda_used
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_singleton(&self) -> bool {
        self.indices.len() == 1
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

#[inline]
fn is_candidate(top: f64, score: f64, lambda: f64) -> bool {
    top - score <= lambda + MEMBERSHIP_EPS
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

pub fn candidate_set(primary: &ScoreVector, lambda: f64) -> Result<CandidateSet> {
    check_lambda(lambda)?;
    let top = primary.max();
    let indices = primary
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &p)| is_candidate(top, p, lambda))
        .map(|(i, _)| i)
        .collect();
    Ok(CandidateSet {
        indices,
        lambda_used: lambda,
    })
}

/// Top score minus runner-up; `+inf` for a single action.
pub fn score_gap(primary: &ScoreVector) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in primary.values() {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    if primary.len() == 1 {
        f64::INFINITY
    } else {
        first - second
    }
}

/// True when the gap exceeds `lambda` by more than the membership tolerance,
/// i.e. exactly when the candidate set at `lambda` is a singleton.
pub fn gap_exceeds(gap: f64, lambda: f64) -> bool {
    gap > lambda + MEMBERSHIP_EPS
}

/// True when the gap is at least `lambda`, treating values within the
/// membership tolerance as equal.
pub fn gap_reaches(gap: f64, lambda: f64) -> bool {
    gap >= lambda - MEMBERSHIP_EPS
}

/// `max_a g(a) - max_{a in C_lambda} g(a)`.
pub fn residual_loss(instance: &ScoredInstance, lambda: f64) -> Result<f64> {
    let guardian = instance.require_guardian()?;
    let set = candidate_set(instance.primary(), lambda)?;
    let g = guardian.values();
    let best_in_set = set
        .indices()
        .iter()
        .map(|&i| g[i])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(guardian.max() - best_in_set)
}

/// Replaces the Guardian scores by the 0/1 vector that marks the Guardian's
/// top choice when it is correct, and all zeros otherwise.
pub fn binarize_guardian(instance: &ScoredInstance) -> Result<ScoredInstance> {
    let correct = instance
        .labels()
        .correct_index
        .ok_or_else(|| Error::MissingLabel {
            id: instance.id().to_owned(),
            label: "correct_index",
        })?;
    let guardian = instance.require_guardian()?;
    let mut values = vec![0.0; instance.action_count()];
    let top = guardian.argmax();
    if top == correct {
        values[top] = 1.0;
    }
    let mut out = instance.clone();
    out.guardian_scores = Some(ScoreVector::new(values)?);
    Ok(out)
}

/// Rule-based Guardian that scores 1 on every lowest-severity action.
pub fn guardian_from_severities(instance: &ScoredInstance) -> Result<ScoredInstance> {
    let sev = instance
        .labels()
        .severities
        .as_ref()
        .ok_or_else(|| Error::MissingLabel {
            id: instance.id().to_owned(),
            label: "severities",
        })?;
    let min = *sev.iter().min().expect("validated non-empty");
    let values = sev.iter().map(|&s| if s == min { 1.0 } else { 0.0 }).collect();
    let mut out = instance.clone();
    out.guardian_scores = Some(ScoreVector::new(values)?);
    Ok(out)
}

/// Divides raw non-negative scores by their sum; a zero sum yields the
/// uniform vector.
pub fn normalize_scores(raw: &[f64]) -> Result<ScoreVector> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty score list"));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!(
            "scores must be finite and non-negative, got {bad}"
        )));
    }
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return ScoreVector::uniform(raw.len());
    }
    let values: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let sum: f64 = values.iter().sum();
    debug_assert!((sum - 1.0).abs() <= NORMALIZED_TOL);
    Ok(ScoreVector {
        values,
        normalized: true,
    })
}

/// A loss that is a non-increasing function of the relaxation parameter.
pub trait LossCurve {
    fn loss_at(&self, lambda: f64) -> f64;

    /// Smallest relaxation at which the loss is guaranteed to be zero.
    fn saturation(&self) -> f64;
}

impl<T: LossCurve + ?Sized> LossCurve for &T {
    fn loss_at(&self, lambda: f64) -> f64 {
        (**self).loss_at(lambda)
    }

    fn saturation(&self) -> f64 {
        (**self).saturation()
    }
}

/// Residual-loss step function of one instance, precomputed so that each
/// evaluation is a binary search. Values are bit-identical to
/// [`residual_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossProfile {
    /// `max p - p(a)` sorted ascending.
    gaps: Vec<f64>,
    /// Running maximum of the Guardian score along `gaps`.
    best_guardian: Vec<f64>,
    guardian_max: f64,
}

impl LossProfile {
    pub fn new(primary: &ScoreVector, guardian: &ScoreVector) -> Self {
        let top = primary.max();
        let mut order: Vec<(f64, f64)> = primary
            .values()
            .iter()
            .zip(guardian.values())
            .map(|(&p, &g)| (top - p, g))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut running = f64::NEG_INFINITY;
        let mut gaps = Vec::with_capacity(order.len());
        let mut best_guardian = Vec::with_capacity(order.len());
        for (gap, g) in order {
            running = running.max(g);
            gaps.push(gap);
            best_guardian.push(running);
        }
        Self {
            gaps,
            best_guardian,
            guardian_max: guardian.max(),
        }
    }
}

impl LossCurve for LossProfile {
    fn loss_at(&self, lambda: f64) -> f64 {
        let members = self.gaps.partition_point(|&gap| gap <= lambda + MEMBERSHIP_EPS);
        // The top action has gap 0, so `members >= 1` for any lambda >= 0.
        self.guardian_max - self.best_guardian[members.max(1) - 1]
    }

    fn saturation(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(0.0)
    }
}
