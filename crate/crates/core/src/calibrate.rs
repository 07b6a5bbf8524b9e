//! Conformal risk control: fit the smallest relaxation `lambda` on a grid
//! whose inflated empirical risk `n/(n+1) * R_n(lambda) + B/(n+1)` meets the
//! budget `alpha`.
//!
//! Empirical risks are accumulated sample by sample in input order, so the
//! same inputs always give bit-identical curves. Because every per-sample loss
//! is non-increasing in `lambda` and rounded addition is monotone, the
//! computed curve is non-increasing too; [`search_lambda`] relies on this to
//! binary-search the grid and returns exactly what a full scan would.

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::scores::{LossCurve, LossProfile, ScoredInstance};
use crate::{Error, Result};

/// The user's risk budget `alpha` and the loss bound `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    pub alpha: f64,
    pub loss_bound_b: f64,
}

impl RiskBudget {
    /// `alpha` must lie in `(0, 1)`, or in `(0, B]` when `B >= 1`.
    pub fn new(alpha: f64, loss_bound_b: f64) -> Result<Self> {
        if !(loss_bound_b.is_finite() && loss_bound_b > 0.0) {
            return Err(Error::invalid(format!("loss bound B must be > 0, got {loss_bound_b}")));
        }
        let upper_ok = alpha < 1.0 || alpha <= loss_bound_b;
        if !(alpha.is_finite() && alpha > 0.0 && upper_ok) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1) (or (0, B] for B >= 1), got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            loss_bound_b,
        })
    }

    pub fn with_unit_bound(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    /// Smallest calibration size with `B/(n+1) <= alpha`.
    pub fn min_calibration_size(&self) -> usize {
        let mut n = (self.loss_bound_b / self.alpha - 1.0).max(0.0).floor() as usize;
        while !self.size_is_feasible(n) {
            n += 1;
        }
        while n > 0 && self.size_is_feasible(n - 1) {
            n -= 1;
        }
        n.max(1)
    }

    pub fn size_is_feasible(&self, n: usize) -> bool {
        self.loss_bound_b / (n as f64 + 1.0) <= self.alpha
    }

    /// The CRC inequality at empirical risk `risk` over `n` samples.
    pub fn admits(&self, risk: f64, n: usize) -> bool {
        inflated_risk(risk, n, self.loss_bound_b) <= self.alpha
    }

    pub(crate) fn check_size(&self, n: usize) -> Result<()> {
        if self.size_is_feasible(n) {
            Ok(())
        } else {
            Err(Error::BudgetInfeasible {
                alpha: self.alpha,
                bound: self.loss_bound_b,
                n,
                min_n: self.min_calibration_size(),
            })
        }
    }
}

/// `n/(n+1) * risk + B/(n+1)`.
pub fn inflated_risk(risk: f64, n: usize, loss_bound_b: f64) -> f64 {
    let n1 = n as f64 + 1.0;
    (n as f64 / n1) * risk + loss_bound_b / n1
}

/// Evenly spaced candidate relaxations `start + i * step`, `i < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
    /// Extend the grid until it covers every sample's saturation point.
    #[serde(default)]
    pub auto_extend: bool,
}

impl LambdaGrid {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        if !(start.is_finite() && start >= 0.0) {
            return Err(Error::invalid(format!("grid start must be >= 0, got {start}")));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid(format!("grid step must be > 0, got {step}")));
        }
        if count < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 points, got {count}")));
        }
        let grid = Self {
            start,
            step,
            count,
            auto_extend: false,
        };
        if !grid.last().is_finite() {
            return Err(Error::invalid("grid end is not finite"));
        }
        Ok(grid)
    }

    /// `{0, step, ..., 1}` with `round(1/step) + 1` points, e.g. 101 points for 0.01.
    pub fn unit(step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && step <= 1.0) {
            return Err(Error::invalid(format!("unit grid step must lie in (0, 1], got {step}")));
        }
        Self::new(0.0, step, (1.0 / step).round() as usize + 1)
    }

    pub fn with_auto_extend(mut self, on: bool) -> Self {
        self.auto_extend = on;
        self
    }

    pub fn point(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn last(&self) -> f64 {
        self.point(self.count - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.point(i))
    }

    /// The same grid, lengthened if needed so its last point is `>= reach`.
    pub fn covering(&self, reach: f64) -> Self {
        let mut grid = *self;
        if reach.is_finite() && grid.last() < reach {
            let extra = ((reach - grid.last()) / grid.step).ceil() as usize;
            grid.count += extra;
            while grid.last() < reach {
                grid.count += 1;
            }
        }
        grid
    }

    pub(crate) fn resolve<L: LossCurve>(&self, samples: &[L]) -> Self {
        if !self.auto_extend {
            return *self;
        }
        let reach = samples
            .iter()
            .map(LossCurve::saturation)
            .fold(0.0_f64, f64::max);
        self.covering(reach)
    }
}

/// Output of [`fit_lambda`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda_hat: f64,
    /// Grid index of `lambda_hat`.
    pub lambda_index: usize,
    pub risk_curve: Vec<(f64, f64)>,
    pub n: usize,
    pub feasible: bool,
    pub budget: RiskBudget,
    /// The grid actually scanned (after any auto-extension).
    pub grid: LambdaGrid,
}

impl CalibrationResult {
    pub fn empirical_risk_at_hat(&self) -> f64 {
        self.risk_curve[self.lambda_index].1
    }
}

/// Fast fit without the risk curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda_hat: f64,
    pub lambda_index: usize,
    pub empirical_risk: f64,
    pub feasible: bool,
}

fn mean_loss<L: LossCurve>(samples: &[L], lambda: f64) -> f64 {
    let mut total = 0.0;
    for s in samples {
        total += s.loss_at(lambda);
    }
    total / samples.len() as f64
}

fn non_empty<L>(samples: &[L]) -> Result<()> {
    if samples.is_empty() {
        Err(Error::invalid("calibration needs at least one sample"))
    } else {
        Ok(())
    }
}

/// Mean loss of `samples` at `lambda`.
pub fn empirical_risk<L: LossCurve>(samples: &[L], lambda: f64) -> Result<f64> {
    non_empty(samples)?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(mean_loss(samples, lambda))
}

/// Empirical risk at every grid point.
pub fn risk_curve<L: LossCurve + Sync>(samples: &[L], grid: &LambdaGrid) -> Result<Vec<(f64, f64)>> {
    risk_curve_with(samples, grid, Execution::default())
}

pub fn risk_curve_with<L: LossCurve + Sync>(
    samples: &[L],
    grid: &LambdaGrid,
    exec: Execution,
) -> Result<Vec<(f64, f64)>> {
    non_empty(samples)?;
    let grid = grid.resolve(samples);
    Ok(exec.map(grid.count, |i| {
        let lambda = grid.point(i);
        (lambda, mean_loss(samples, lambda))
    }))
}

/// Smallest grid point meeting the CRC inequality, scanning the whole curve.
pub fn fit_lambda<L: LossCurve + Sync>(
    samples: &[L],
    budget: RiskBudget,
    grid: &LambdaGrid,
) -> Result<CalibrationResult> {
    non_empty(samples)?;
    budget.check_size(samples.len())?;
    let grid = grid.resolve(samples);
    let curve = risk_curve_with(samples, &grid, Execution::default())?;
    Ok(fit_from_curve(curve, samples.len(), budget, grid))
}

/// Applies the CRC rule to a precomputed risk curve.
pub fn fit_from_curve(
    risk_curve: Vec<(f64, f64)>,
    n: usize,
    budget: RiskBudget,
    grid: LambdaGrid,
) -> CalibrationResult {
    let hit = risk_curve
        .iter()
        .position(|&(_, risk)| budget.admits(risk, n));
    let (lambda_index, feasible) = match hit {
        Some(i) => (i, true),
        None => (risk_curve.len() - 1, false),
    };
    CalibrationResult {
        lambda_hat: risk_curve[lambda_index].0,
        lambda_index,
        risk_curve,
        n,
        feasible,
        budget,
        grid,
    }
}

/// Same answer as [`fit_lambda`], found by binary search over the grid.
pub fn search_lambda<L: LossCurve>(samples: &[L], budget: RiskBudget, grid: &LambdaGrid) -> Result<LambdaFit> {
    non_empty(samples)?;
    budget.check_size(samples.len())?;
    let grid = grid.resolve(samples);
    let n = samples.len();
    let admits = |i: usize| budget.admits(mean_loss(samples, grid.point(i)), n);
    let last = grid.count - 1;
    if !admits(last) {
        return Ok(LambdaFit {
            lambda_hat: grid.point(last),
            lambda_index: last,
            empirical_risk: mean_loss(samples, grid.point(last)),
            feasible: false,
        });
    }
    let (mut lo, mut hi) = (0usize, last);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if admits(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let lambda_hat = grid.point(lo);
    Ok(LambdaFit {
        lambda_hat,
        lambda_index: lo,
        empirical_risk: mean_loss(samples, lambda_hat),
        feasible: true,
    })
}

/// Loss profiles for instances that all carry Guardian scores.
pub fn profiles(instances: &[ScoredInstance]) -> Result<Vec<LossProfile>> {
    instances.iter().map(ScoredInstance::loss_profile).collect()
}

/// [`fit_lambda`] over scored instances.
pub fn fit_instances(
    instances: &[ScoredInstance],
    budget: RiskBudget,
    grid: &LambdaGrid,
) -> Result<CalibrationResult> {
    fit_lambda(&profiles(instances)?, budget, grid)
}
