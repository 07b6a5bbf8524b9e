//! Synthetic laboratory for the finite-sample guarantees.
//!
//! Each synthetic observation is a step loss `L(lambda) = B * 1{lambda < d}`
//! whose breakpoint `d` is `lambda_max` times a Beta draw, so the true risk
//! `R(lambda) = B * (1 - F(lambda / lambda_max))` is known in closed form,
//! continuous and strictly decreasing. Utility defaults to
//! `U(lambda) = U_max * (1 - lambda / lambda_max)`, which is `U_max/lambda_max`-Lipschitz.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

use crate::calibrate::{search_lambda, LambdaGrid, RiskBudget};
use crate::exec::{derive_seed, stream_rng, Execution};
use crate::scores::LossCurve;
use crate::{Error, Result};

const LAMBDA_STAR_TOL: f64 = 1e-9;

/// Reps below this make the rate fit too noisy to assert on.
pub const MIN_REPS_FOR_RATE: usize = 200;

/// `B * 1{lambda < breakpoint}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub breakpoint: f64,
    pub bound: f64,
}

impl LossCurve for StepLoss {
    fn loss_at(&self, lambda: f64) -> f64 {
        if lambda < self.breakpoint {
            self.bound
        } else {
            0.0
        }
    }

    fn saturation(&self) -> f64 {
        self.breakpoint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFamily {
    pub beta_a: f64,
    pub beta_b: f64,
    pub lambda_max: f64,
    pub loss_bound: f64,
    pub utility_max: f64,
}

impl Default for SyntheticFamily {
    fn default() -> Self {
        Self::uniform()
    }
}

impl SyntheticFamily {
    /// Uniform breakpoints on `[0, 1]`, `B = 1`, `U_max = 1`.
    pub fn uniform() -> Self {
        Self {
            beta_a: 1.0,
            beta_b: 1.0,
            lambda_max: 1.0,
            loss_bound: 1.0,
            utility_max: 1.0,
        }
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Self {
            beta_a: a,
            beta_b: b,
            ..Self::uniform()
        }
        .validated()
    }

    pub fn with_loss_bound(self, bound: f64) -> Result<Self> {
        Self {
            loss_bound: bound,
            ..self
        }
        .validated()
    }

    pub fn with_lambda_max(self, lambda_max: f64) -> Result<Self> {
        Self { lambda_max, ..self }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.beta_a) && positive(self.beta_b)) {
            return Err(Error::invalid("beta parameters must be finite and > 0"));
        }
        if !(positive(self.lambda_max) && positive(self.loss_bound) && positive(self.utility_max)) {
            return Err(Error::invalid("lambda_max, B and U_max must be finite and > 0"));
        }
        Ok(self)
    }

    fn is_uniform(&self) -> bool {
        self.beta_a == 1.0 && self.beta_b == 1.0
    }

    fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        if self.is_uniform() {
            x
        } else {
            BetaDist::new(self.beta_a, self.beta_b)
                .expect("validated beta parameters")
                .cdf(x)
        }
    }

    /// True risk `E[L(lambda)]`.
    pub fn risk(&self, lambda: f64) -> f64 {
        self.loss_bound * (1.0 - self.cdf(lambda / self.lambda_max))
    }

    pub fn utility(&self, lambda: f64) -> f64 {
        self.utility_max * (1.0 - (lambda / self.lambda_max).clamp(0.0, 1.0))
    }

    pub fn lipschitz(&self) -> f64 {
        self.utility_max / self.lambda_max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StepLoss {
        let unit = if self.is_uniform() {
            rng.random::<f64>()
        } else {
            Beta::new(self.beta_a, self.beta_b)
                .expect("validated beta parameters")
                .sample(rng)
        };
        StepLoss {
            breakpoint: unit * self.lambda_max,
            bound: self.loss_bound,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<StepLoss> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// `[0, lambda_max]` in 100 000 steps; fine enough that quantisation
    /// stays well below the `O(1/n)` effects being measured.
    pub fn default_grid(&self) -> LambdaGrid {
        LambdaGrid::new(0.0, self.lambda_max * 1e-5, 100_001).expect("valid grid")
    }
}

/// `inf { lambda in [0, lambda_max] : R(lambda) <= alpha }`, by bisection.
pub fn lambda_star(family: &SyntheticFamily, alpha: f64) -> Result<f64> {
    let sup = family.risk(0.0);
    let inf = family.risk(family.lambda_max);
    if !(alpha >= inf && alpha <= sup) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} lies outside the risk range [{inf}, {sup}]"
        )));
    }
    if sup <= alpha {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, family.lambda_max);
    while hi - lo > LAMBDA_STAR_TOL {
        let mid = 0.5 * (lo + hi);
        if family.risk(mid) <= alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub alpha: f64,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Defaults to [`SyntheticFamily::default_grid`].
    pub grid: Option<LambdaGrid>,
    #[serde(skip, default)]
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    /// Mean of `U(lambda*) - U(lambda_hat)`.
    pub mean_regret: f64,
    pub regret_se: f64,
    /// Mean of `R(lambda_hat)`.
    pub mean_risk: f64,
    pub risk_se: f64,
    pub mean_lambda_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub alpha: f64,
    pub lambda_star: f64,
    pub reps: usize,
    pub points: Vec<ConvergencePoint>,
    /// Least-squares slope of `ln(mean regret)` against `ln n`; absent when
    /// some mean regret is not positive or fewer than two sizes were run.
    pub slope: Option<f64>,
    /// `K * grid step`: how far quantisation alone can move the regret.
    pub grid_slack: f64,
    pub rate_assertable: bool,
}

impl ConvergenceReport {
    /// True when the rate can be asserted and the fitted slope is `<= max_slope`.
    pub fn rate_holds(&self, max_slope: f64) -> Option<bool> {
        if !self.rate_assertable {
            return None;
        }
        self.slope.map(|s| s <= max_slope)
    }
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Regret of the fitted threshold against the oracle `lambda*` across
/// calibration sizes.
pub fn convergence_study(family: &SyntheticFamily, config: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if config.reps == 0 {
        return Err(Error::invalid("reps must be >= 1"));
    }
    if config.n_list.is_empty() || config.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n_list must be non-empty and strictly increasing"));
    }
    let budget = RiskBudget::new(config.alpha, family.loss_bound)?;
    let star = lambda_star(family, config.alpha)?;
    let grid = config.grid.unwrap_or_else(|| family.default_grid());
    let u_star = family.utility(star);

    let mut points = Vec::with_capacity(config.n_list.len());
    for (k, &n) in config.n_list.iter().enumerate() {
        let stream = derive_seed(config.seed, k as u64);
        let reps = config.execution.map(config.reps, |r| {
            let mut rng = stream_rng(stream, r as u64);
            let draws = family.draw(&mut rng, n);
            search_lambda(&draws, budget, &grid).map(|fit| fit.lambda_hat)
        });
        let hats = reps.into_iter().collect::<Result<Vec<_>>>()?;
        let regrets: Vec<f64> = hats.iter().map(|&h| u_star - family.utility(h)).collect();
        let risks: Vec<f64> = hats.iter().map(|&h| family.risk(h)).collect();
        let (mean_regret, regret_se) = mean_and_se(&regrets);
        let (mean_risk, risk_se) = mean_and_se(&risks);
        points.push(ConvergencePoint {
            n,
            mean_regret,
            regret_se,
            mean_risk,
            risk_se,
            mean_lambda_hat: hats.iter().sum::<f64>() / hats.len() as f64,
        });
    }

    let slope = if points.iter().all(|p| p.mean_regret > 0.0) {
        let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean_regret.ln()).collect();
        ols_slope(&xs, &ys)
    } else {
        None
    };
    Ok(ConvergenceReport {
        alpha: config.alpha,
        lambda_star: star,
        reps: config.reps,
        slope,
        grid_slack: family.lipschitz() * grid.step,
        rate_assertable: config.reps >= MIN_REPS_FOR_RATE && slope.is_some(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCheck {
    pub alpha: f64,
    pub n: usize,
    pub reps: usize,
    /// Grand mean of the loss on one fresh draw per replication.
    pub mean_loss: f64,
    pub std_error: f64,
    /// Mean of the exact conditional risk `R(lambda_hat)`.
    pub mean_true_risk: f64,
    pub true_risk_se: f64,
    pub mean_lambda_hat: f64,
}

impl RiskCheck {
    /// `alpha - 2B/(n+1) - 3 se <= mean_loss <= alpha + 3 se`.
    pub fn within_sandwich(&self, loss_bound: f64) -> bool {
        let slack = 3.0 * self.std_error;
        let lower = self.alpha - 2.0 * loss_bound / (self.n as f64 + 1.0) - slack;
        self.mean_loss <= self.alpha + slack && self.mean_loss >= lower
    }
}

/// Fits `lambda_hat` on `n` draws and scores it on one fresh draw, `reps` times.
pub fn risk_guarantee_mc(
    family: &SyntheticFamily,
    alpha: f64,
    n: usize,
    reps: usize,
    seed: u64,
    grid: Option<LambdaGrid>,
    execution: Execution,
) -> Result<RiskCheck> {
    if reps == 0 {
        return Err(Error::invalid("reps must be >= 1"));
    }
    let budget = RiskBudget::new(alpha, family.loss_bound)?;
    let grid = grid.unwrap_or_else(|| family.default_grid());
    let results = execution.map(reps, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let draws = family.draw(&mut rng, n);
        let fit = search_lambda(&draws, budget, &grid)?;
        let fresh = family.sample(&mut rng);
        Ok((fresh.loss_at(fit.lambda_hat), family.risk(fit.lambda_hat), fit.lambda_hat))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = results.iter().map(|r| r.0).collect();
    let risks: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (mean_loss, std_error) = mean_and_se(&losses);
    let (mean_true_risk, true_risk_se) = mean_and_se(&risks);
    Ok(RiskCheck {
        alpha,
        n,
        reps,
        mean_loss,
        std_error,
        mean_true_risk,
        true_risk_se,
        mean_lambda_hat: results.iter().map(|r| r.2).sum::<f64>() / reps as f64,
    })
}
