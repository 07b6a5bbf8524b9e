//! Aggregated trial reports and their tabular and plot-ready forms.

use serde::{Deserialize, Serialize};

use crate::route::Variant;

use super::metrics::{GuardrailMetric, UtilityMetric};

/// Mean and sample standard deviation across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// `None` for an empty series. A constant series (including a single
    /// value) gets exactly that value as its mean and `std = 0`.
    pub fn of(values: &[f64]) -> Option<Self> {
        let first = *values.first()?;
        if values.iter().all(|&v| v == first) {
            return Some(Self { mean: first, std: 0.0 });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Policy {
    Primary,
    Guardian,
    Arbitrage { alpha: f64 },
    /// Random router matched to the cost of `Arbitrage { alpha }`.
    RandomMatched { alpha: f64 },
    RandomFixed { q: f64 },
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Self::Primary => "primary".into(),
            Self::Guardian => "guardian".into(),
            Self::Arbitrage { alpha } => format!("ca(alpha={alpha})"),
            Self::RandomMatched { alpha } => format!("random-matched(alpha={alpha})"),
            Self::RandomFixed { q } => format!("random(q={q})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub policy: String,
    pub kind: Policy,
    /// Trials contributing to this row.
    pub trials: usize,
    pub utility: Stat,
    pub guardrail: Stat,
    /// Dollars per 1000 questions.
    pub cost_per_1000: Option<Stat>,
    pub lambda_hat: Option<Stat>,
    /// Percentage of questions answered by the Guardian.
    pub guardian_pct: Stat,
    /// Mean candidate-set size.
    pub set_size: Option<Stat>,
    /// Utility minus that of the cost-matched random router.
    pub delta: Option<Stat>,
    /// Routing probability of a random router.
    pub q: Option<Stat>,
}

/// Per-trial result of one arbitrage policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPoint {
    pub trial: usize,
    pub alpha: f64,
    pub lambda_hat: f64,
    pub utility: f64,
    pub guardrail: f64,
    pub cost_per_1000: Option<f64>,
    pub guardian_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaCount {
    pub alpha: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Trials whose grid never met the budget, per alpha; these cells are
    /// left out of the means.
    pub infeasible: Vec<AlphaCount>,
    /// Cost-matched routers whose `q` fell outside `[0, 1]` and was clamped.
    pub clamped_q: usize,
    /// Cost-matched routers that fell back to matching Guardian usage because
    /// no cost difference was available.
    pub usage_matched_q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trials: usize,
    pub calib_size: usize,
    pub eval_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub utility_metric: UtilityMetric,
    pub guardrail_metric: GuardrailMetric,
    pub rows: Vec<PolicyRow>,
    pub diagnostics: Diagnostics,
    pub points: Vec<TrialPoint>,
}

pub const TABLE_COLUMNS: [&str; 12] = [
    "policy",
    "utility_mean",
    "utility_std",
    "guardrail_mean",
    "guardrail_std",
    "cost_mean",
    "cost_std",
    "lambda_mean",
    "lambda_std",
    "delta",
    "guardian_pct_mean",
    "guardian_pct_std",
];

/// One plot point per policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub policy: String,
    #[serde(flatten)]
    pub kind: Policy,
    pub utility: f64,
    pub utility_std: f64,
    pub guardrail: f64,
    pub cost_per_1000: Option<f64>,
    pub guardian_pct: f64,
    pub lambda_hat: Option<f64>,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl TrialReport {
    pub fn row(&self, kind: &Policy) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| &r.kind == kind)
    }

    /// Rows in [`TABLE_COLUMNS`] order; absent values are empty strings.
    pub fn table_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.policy.clone(),
                    num(r.utility.mean),
                    num(r.utility.std),
                    num(r.guardrail.mean),
                    num(r.guardrail.std),
                    opt(r.cost_per_1000.map(|s| s.mean)),
                    opt(r.cost_per_1000.map(|s| s.std)),
                    opt(r.lambda_hat.map(|s| s.mean)),
                    opt(r.lambda_hat.map(|s| s.std)),
                    opt(r.delta.map(|s| s.mean)),
                    num(r.guardian_pct.mean),
                    num(r.guardian_pct.std),
                ]
            })
            .collect()
    }

    pub fn frontier(&self) -> Vec<FrontierPoint> {
        self.rows
            .iter()
            .map(|r| FrontierPoint {
                policy: r.policy.clone(),
                kind: r.kind,
                utility: r.utility.mean,
                utility_std: r.utility.std,
                guardrail: r.guardrail.mean,
                cost_per_1000: r.cost_per_1000.map(|s| s.mean),
                guardian_pct: r.guardian_pct.mean,
                lambda_hat: r.lambda_hat.map(|s| s.mean),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_series() {
        assert_eq!(Stat::of(&[]), None);
        assert_eq!(Stat::of(&[2.5]), Some(Stat { mean: 2.5, std: 0.0 }));
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn labels_are_distinct() {
        let labels: Vec<String> = [
            Policy::Primary,
            Policy::Guardian,
            Policy::Arbitrage { alpha: 0.1 },
            Policy::RandomMatched { alpha: 0.1 },
            Policy::RandomFixed { q: 0.5 },
        ]
        .iter()
        .map(Policy::label)
        .collect();
        let mut dedup = labels.clone();
        dedup.dedup();
        assert_eq!(labels, dedup);
        assert_eq!(labels[2], "ca(alpha=0.1)");
    }
}
