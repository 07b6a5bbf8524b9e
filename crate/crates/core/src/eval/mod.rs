//! Repeated calibration/evaluation experiments.
//!
//! Each trial splits the dataset, fits `lambda_hat` for every budget on the
//! calibration part, routes the evaluation part and records utility,
//! guardrail loss, cost and Guardian usage. Primary-only, Guardian-only and
//! random-router baselines are measured on the same split. Trials may run in
//! parallel; their results are aggregated in trial order.

mod baseline;
mod metrics;
mod report;
mod split;

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

pub use baseline::{cost_matched_q, random_router_cost_matched, random_router_fixed, CostMatchedRouter, RouterMetrics};
pub use metrics::{
    accuracy_metric, guardrail_value, helpful_match_metric, residual_loss_metric, severity_loss_metric,
    utility_value, GuardrailMetric, MetricSpec, UtilityMetric,
};
pub use report::{
    AlphaCount, Diagnostics, FrontierPoint, Policy, PolicyRow, Stat, TrialPoint, TrialReport, TABLE_COLUMNS,
};
pub use split::{binomial, combinations, stratified_split, uniform_split, Split, MAX_EXHAUSTIVE_SPLITS};

use crate::calibrate::{fit_from_curve, risk_curve_with, LambdaGrid, RiskBudget};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::route::{decide, RoutingDecision, RoutingPolicy, Variant};
use crate::scores::{LossProfile, ScoredInstance};
use crate::{Error, Result};
use metrics::{Billing, Outcome, Round, Tally};

const SPLIT_STREAM: u64 = 0;
const MATCHED_STREAM: u64 = 1 << 32;
const FIXED_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitMode {
    /// Fresh uniform shuffle per trial.
    Uniform,
    /// Equal shares per value of a metadata field.
    Stratified { key: String },
    /// Every calibration subset of size `calib_size`, in lexicographic order.
    Exhaustive,
    /// The given calibration index sets, one per trial.
    Explicit { calib: Vec<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    /// Ignored by the exhaustive and explicit split modes, which run one trial
    /// per listed split.
    pub trials: usize,
    pub calib_size: usize,
    /// Defaults to everything not used for calibration.
    pub eval_size: Option<usize>,
    pub alphas: Vec<f64>,
    pub loss_bound: f64,
    pub grid: LambdaGrid,
    pub variant: Variant,
    pub seed: u64,
    pub split: SplitMode,
    pub metrics: MetricSpec,
    /// Add a random router matched to each arbitrage policy's cost.
    pub cost_matched: bool,
    /// Random routers with fixed Guardian probabilities.
    pub fixed_q: Vec<f64>,
    #[serde(skip, default)]
    pub execution: Execution,
}

impl TrialConfig {
    /// 30 uniform trials on `[0, 1]` in steps of 0.001, extended as needed,
    /// with `B = 1`.
    pub fn new(calib_size: usize, alphas: Vec<f64>) -> Self {
        Self {
            trials: 30,
            calib_size,
            eval_size: None,
            alphas,
            loss_bound: 1.0,
            grid: LambdaGrid::unit(0.001).expect("valid grid").with_auto_extend(true),
            variant: Variant::Restricted,
            seed: 0,
            split: SplitMode::Uniform,
            metrics: MetricSpec::default(),
            cost_matched: true,
            fixed_q: Vec::new(),
            execution: Execution::default(),
        }
    }
}

/// Outcomes of the two single-model policies on one instance.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Endpoints {
    pub primary: Outcome,
    pub guardian: Outcome,
}

pub(crate) fn prepare_outcomes<I: Borrow<ScoredInstance>>(dataset: &[I], spec: &MetricSpec) -> Result<Vec<Endpoints>> {
    dataset
        .iter()
        .map(|inst| {
            let inst = inst.borrow();
            Ok(Endpoints {
                primary: spec.outcome(inst, &RoutingDecision::primary_only(inst), Billing::PrimaryOnly)?,
                guardian: spec.outcome(inst, &RoutingDecision::guardian_only(inst)?, Billing::GuardianOnly)?,
            })
        })
        .collect()
}

/// One trial's value for one policy.
#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    utility: f64,
    guardrail: f64,
    cost: Option<f64>,
    guardian_pct: f64,
    lambda: Option<f64>,
    set_size: Option<f64>,
    delta: Option<f64>,
    q: Option<f64>,
}

impl From<Round> for Cell {
    fn from(r: Round) -> Self {
        Self {
            utility: r.utility,
            guardrail: r.guardrail,
            cost: r.cost_per_1000,
            guardian_pct: r.guardian_pct,
            ..Self::default()
        }
    }
}

struct TrialOutcome {
    primary: Cell,
    guardian: Cell,
    arbitrage: Vec<Option<Cell>>,
    matched: Vec<Option<Cell>>,
    fixed: Vec<Cell>,
    clamped_q: usize,
    usage_matched_q: usize,
}

struct Harness<'a> {
    dataset: &'a [ScoredInstance],
    config: &'a TrialConfig,
    budgets: Vec<RiskBudget>,
    profiles: Vec<LossProfile>,
    endpoints: Vec<Endpoints>,
    listed: Option<Vec<Vec<usize>>>,
    eval_size: usize,
}

impl Harness<'_> {
    fn split(&self, trial: usize, seed: u64) -> Result<Split> {
        let n = self.config.calib_size;
        if let Some(listed) = &self.listed {
            return split::complement_split(&listed[trial], self.dataset.len(), self.eval_size);
        }
        let mut rng = stream_rng(seed, SPLIT_STREAM);
        match &self.config.split {
            SplitMode::Stratified { key } => stratified_split(self.dataset, key, n + self.eval_size, n, &mut rng),
            _ => uniform_split(self.dataset.len(), n, self.eval_size, &mut rng),
        }
    }

    fn matched_q(&self, arbitrage: &Round, primary: &Round, guardian: &Round) -> (f64, bool, bool) {
        match (arbitrage.cost_per_1000, primary.cost_per_1000, guardian.cost_per_1000) {
            (Some(ca), Some(p), Some(g)) if g != p => {
                let q = (ca - p) / (g - p);
                let clamped = q.clamp(0.0, 1.0);
                (clamped, clamped != q, false)
            }
            _ => (arbitrage.guardian_pct / 100.0, false, true),
        }
    }

    fn run_trial(&self, trial: usize) -> Result<TrialOutcome> {
        let config = self.config;
        let spec = &config.metrics;
        let seed = derive_seed(config.seed, trial as u64);
        let (calib, eval) = self.split(trial, seed)?;

        let mut primary = Tally::new(spec);
        let mut guardian = Tally::new(spec);
        for &i in &eval {
            primary.add(&self.endpoints[i].primary, false);
            guardian.add(&self.endpoints[i].guardian, true);
        }
        let (primary, guardian) = (primary.finish(), guardian.finish());
        let pairs = || eval.iter().map(|&i| (&self.endpoints[i].primary, &self.endpoints[i].guardian));

        let calib_profiles: Vec<&LossProfile> = calib.iter().map(|&i| &self.profiles[i]).collect();
        let grid = config.grid.resolve(&calib_profiles);
        let curve = risk_curve_with(&calib_profiles, &grid, Execution::Sequential)?;

        let mut out = TrialOutcome {
            primary: primary.into(),
            guardian: guardian.into(),
            arbitrage: Vec::with_capacity(self.budgets.len()),
            matched: Vec::with_capacity(self.budgets.len()),
            fixed: Vec::with_capacity(config.fixed_q.len()),
            clamped_q: 0,
            usage_matched_q: 0,
        };
        for (k, budget) in self.budgets.iter().enumerate() {
            let fit = fit_from_curve(curve.clone(), calib.len(), *budget, grid);
            if !fit.feasible {
                out.arbitrage.push(None);
                out.matched.push(None);
                continue;
            }
            let policy = RoutingPolicy::new(fit.lambda_hat, config.variant)?;
            let mut tally = Tally::new(spec);
            let mut set_sizes = 0usize;
            for &i in &eval {
                let inst = &self.dataset[i];
                let decision = decide(inst, &policy)?;
                tally.add(&spec.outcome(inst, &decision, Billing::Routed)?, decision.deferred);
                set_sizes += decision.candidate_count;
            }
            let round = tally.finish();
            let mut cell = Cell {
                lambda: Some(fit.lambda_hat),
                set_size: Some(set_sizes as f64 / eval.len() as f64),
                ..Cell::from(round)
            };
            if config.cost_matched {
                let (q, clamped, by_usage) = self.matched_q(&round, &primary, &guardian);
                out.clamped_q += usize::from(clamped);
                out.usage_matched_q += usize::from(by_usage);
                let mut rng = stream_rng(seed, MATCHED_STREAM + k as u64);
                let mixed = baseline::mix(pairs(), q, spec, &mut rng);
                cell.delta = Some(round.utility - mixed.utility);
                out.matched.push(Some(Cell {
                    q: Some(q),
                    ..Cell::from(mixed)
                }));
            } else {
                out.matched.push(None);
            }
            out.arbitrage.push(Some(cell));
        }
        for (j, &q) in config.fixed_q.iter().enumerate() {
            let mut rng = stream_rng(seed, FIXED_STREAM + j as u64);
            out.fixed.push(Cell {
                q: Some(q),
                ..baseline::mix(pairs(), q, spec, &mut rng).into()
            });
        }
        Ok(out)
    }
}

fn validate(dataset: &[ScoredInstance], config: &TrialConfig) -> Result<usize> {
    if config.calib_size == 0 {
        return Err(Error::invalid("calibration size must be >= 1"));
    }
    if config.alphas.is_empty() {
        return Err(Error::invalid("at least one alpha is required"));
    }
    if matches!(config.split, SplitMode::Uniform | SplitMode::Stratified { .. }) && config.trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if let Some(q) = config.fixed_q.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::invalid(format!("routing probability must lie in [0, 1], got {q}")));
    }
    let available = dataset.len().saturating_sub(config.calib_size);
    let eval = config.eval_size.unwrap_or(available);
    if eval == 0 || config.calib_size + eval > dataset.len() {
        return Err(Error::InsufficientData(format!(
            "{} calibration + {eval} evaluation items requested from {}",
            config.calib_size,
            dataset.len()
        )));
    }
    Ok(eval)
}

/// Runs the configured trials and aggregates mean and standard deviation per
/// policy.
pub fn run_trials(dataset: &[ScoredInstance], config: &TrialConfig) -> Result<TrialReport> {
    let eval_size = validate(dataset, config)?;
    let budgets = config
        .alphas
        .iter()
        .map(|&a| {
            let b = RiskBudget::new(a, config.loss_bound)?;
            b.check_size(config.calib_size)?;
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    let listed = match &config.split {
        SplitMode::Exhaustive => Some(combinations(dataset.len(), config.calib_size)?),
        SplitMode::Explicit { calib } => {
            if calib.is_empty() || calib.iter().any(|c| c.len() != config.calib_size) {
                return Err(Error::invalid(format!(
                    "explicit splits must be non-empty and each hold {} indices",
                    config.calib_size
                )));
            }
            Some(calib.clone())
        }
        _ => None,
    };
    let harness = Harness {
        dataset,
        config,
        budgets,
        profiles: crate::calibrate::profiles(dataset)?,
        endpoints: prepare_outcomes(dataset, &config.metrics)?,
        eval_size,
        listed,
    };
    let trials = harness.listed.as_ref().map_or(config.trials, Vec::len);
    let outcomes = config
        .execution
        .map(trials, |t| harness.run_trial(t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(config, trials, eval_size, &outcomes))
}

fn row(kind: Policy, cells: &[Option<Cell>]) -> Option<PolicyRow> {
    let cells: Vec<&Cell> = cells.iter().flatten().collect();
    let col = |f: fn(&Cell) -> f64| Stat::of(&cells.iter().map(|c| f(c)).collect::<Vec<_>>());
    let opt_col = |f: fn(&Cell) -> Option<f64>| {
        let vals: Option<Vec<f64>> = cells.iter().map(|c| f(c)).collect();
        vals.and_then(|v| Stat::of(&v))
    };
    Some(PolicyRow {
        policy: kind.label(),
        kind,
        trials: cells.len(),
        utility: col(|c| c.utility)?,
        guardrail: col(|c| c.guardrail)?,
        cost_per_1000: opt_col(|c| c.cost),
        lambda_hat: opt_col(|c| c.lambda),
        guardian_pct: col(|c| c.guardian_pct)?,
        set_size: opt_col(|c| c.set_size),
        delta: opt_col(|c| c.delta),
        q: opt_col(|c| c.q),
    })
}

fn aggregate(config: &TrialConfig, trials: usize, eval_size: usize, outcomes: &[TrialOutcome]) -> TrialReport {
    let column = |f: &dyn Fn(&TrialOutcome) -> Option<Cell>| outcomes.iter().map(f).collect::<Vec<_>>();
    let mut rows = Vec::new();
    rows.extend(row(Policy::Primary, &column(&|o| Some(o.primary))));
    for (k, &alpha) in config.alphas.iter().enumerate() {
        rows.extend(row(Policy::Arbitrage { alpha }, &column(&|o| o.arbitrage[k])));
    }
    rows.extend(row(Policy::Guardian, &column(&|o| Some(o.guardian))));
    for (k, &alpha) in config.alphas.iter().enumerate() {
        rows.extend(row(Policy::RandomMatched { alpha }, &column(&|o| o.matched[k])));
    }
    for (j, &q) in config.fixed_q.iter().enumerate() {
        rows.extend(row(Policy::RandomFixed { q }, &column(&|o| Some(o.fixed[j]))));
    }

    let mut points = Vec::new();
    for (t, o) in outcomes.iter().enumerate() {
        for (k, &alpha) in config.alphas.iter().enumerate() {
            if let Some(c) = o.arbitrage[k] {
                points.push(TrialPoint {
                    trial: t,
                    alpha,
                    lambda_hat: c.lambda.unwrap_or_default(),
                    utility: c.utility,
                    guardrail: c.guardrail,
                    cost_per_1000: c.cost,
                    guardian_pct: c.guardian_pct,
                });
            }
        }
    }
    let diagnostics = Diagnostics {
        infeasible: config
            .alphas
            .iter()
            .enumerate()
            .map(|(k, &alpha)| AlphaCount {
                alpha,
                trials: outcomes.iter().filter(|o| o.arbitrage[k].is_none()).count(),
            })
            .filter(|c| c.trials > 0)
            .collect(),
        clamped_q: outcomes.iter().map(|o| o.clamped_q).sum(),
        usage_matched_q: outcomes.iter().map(|o| o.usage_matched_q).sum(),
    };
    TrialReport {
        trials,
        calib_size: config.calib_size,
        eval_size,
        seed: config.seed,
        variant: config.variant,
        utility_metric: config.metrics.utility,
        guardrail_metric: config.metrics.guardrail,
        rows,
        diagnostics,
        points,
    }
}
