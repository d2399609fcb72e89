//! Kernel ridge regression with Horvitz–Thompson weighted loss.
//!
//! Minimizing `sum_i w_i (y_i - m(X_i))^2 + lambda ||m||^2` over the RKHS of
//! the kernel gives `m(x) = sum_i alpha_i K(x, X_i)` with
//! `(W K + lambda I) alpha = W y`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{distances_to, pairwise_distances, Metric, Predictor, SurveySample};
use crate::linalg::{Lu, Matrix};
use crate::survey::median_heuristic_sigma_from_distances;
use crate::{Error, Result};

/// Relative tolerance `|fast - refit| <= tol * (1 + |refit|)` under which a
/// hat-matrix leave-one-out prediction is accepted.
pub const LOO_AGREEMENT_TOL: f64 = 1e-8;
/// Below this value of `1 - H_ii` the hat-matrix shortcut is not used.
const HAT_DIAG_FLOOR: f64 = 1e-10;
/// Number of folds refitted explicitly to audit the shortcut under unequal weights.
const AUDIT_FOLDS: usize = 5;
const CONDITION_WARN: f64 = 1e12;
/// Largest system for which `krr_fit` computes a condition number.
const CONDITION_CHECK_MAX_N: usize = 1500;

/// Positive-definite kernel as a function of a distance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrrKernel {
    /// `exp(-d / sigma)`.
    #[default]
    Laplacian,
    /// `exp(-d^2 / (2 sigma^2))`.
    Gaussian,
}

impl KrrKernel {
    pub fn eval(&self, dist: f64, sigma: f64) -> f64 {
        match self {
            KrrKernel::Laplacian => laplacian_kernel(dist, sigma),
            KrrKernel::Gaussian => (-(dist * dist) / (2.0 * sigma * sigma)).exp(),
        }
    }
}

pub fn laplacian_kernel(dist: f64, sigma: f64) -> f64 {
    (-dist / sigma).exp()
}

/// How leave-one-out predictions are obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LooStrategy {
    /// Hat-matrix shortcut with uniform weights; with unequal weights the
    /// shortcut is audited on a few explicit refits and abandoned for full
    /// refitting if any audited fold disagrees.
    #[default]
    Auto,
    /// Hat-matrix shortcut, refitting only folds with `1 - H_ii` near zero.
    HatMatrix,
    /// Explicit refit of every fold.
    Refit,
    /// Both routes for every fold; the refit wins wherever they disagree.
    Verified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrrOptions {
    /// Kernel scale; the survey-weighted median heuristic when `None`.
    pub sigma: Option<f64>,
    /// Distance between predictors; chosen from the predictor kind when `None`.
    pub metric: Option<Metric>,
    pub kernel: KrrKernel,
    /// Recompute the median-heuristic scale inside every leave-one-out fold.
    pub sigma_per_fold: bool,
    pub loo: LooStrategy,
}

impl Default for KrrOptions {
    fn default() -> Self {
        Self { sigma: None, metric: None, kernel: KrrKernel::Laplacian, sigma_per_fold: false, loo: LooStrategy::Auto }
    }
}

impl KrrOptions {
    pub fn with_sigma(sigma: Option<f64>) -> Self {
        Self { sigma, ..Self::default() }
    }
}

/// A fitted regressor. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub predictors: Vec<Predictor>,
    pub alpha: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub metric: Metric,
    pub kernel: KrrKernel,
}

impl KrrModel {
    pub fn predict(&self, x: &Predictor) -> Result<f64> {
        let d = distances_to(&self.predictors, self.metric, x)?;
        Ok(d.iter().zip(&self.alpha).map(|(d, a)| a * self.kernel.eval(*d, self.sigma)).sum())
    }
}

/// Leave-one-out predictions with a record of which folds were refitted.
#[derive(Debug, Clone, PartialEq)]
pub struct LooOutcome {
    pub predictions: Vec<f64>,
    /// Folds whose prediction came from an explicit refit.
    pub refit_folds: Vec<usize>,
    /// Folds where the hat-matrix shortcut and the refit disagreed beyond
    /// [`LOO_AGREEMENT_TOL`] (only populated when both were computed).
    pub disagreements: Vec<usize>,
}

/// Result of a regularization search.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub sigma: f64,
    /// `(lambda, weighted LOO squared error)` for every grid entry, in grid order.
    pub errors: Vec<(f64, f64)>,
    /// Leave-one-out predictions at the selected lambda.
    pub loo: Vec<f64>,
}

/// Training data with its distances and Gram matrix, reusable across
/// regularization values.
#[derive(Debug, Clone)]
pub struct KrrProblem {
    predictors: Vec<Predictor>,
    distances: Vec<Vec<f64>>,
    gram: Matrix,
    responses: Vec<f64>,
    weights: Vec<f64>,
    sigma: f64,
    kernel: KrrKernel,
    metric: Metric,
    sigma_per_fold: bool,
    strategy: LooStrategy,
}

fn resolve_sigma(distances: &[Vec<f64>], weights: &[f64], sigma: Option<f64>) -> Result<f64> {
    match sigma {
        Some(s) if s > 0.0 && s.is_finite() => Ok(s),
        Some(s) => Err(Error::InvalidArgument(format!("kernel scale {s} must be positive"))),
        // any scale gives K = [1] for a single observation
        None if distances.len() == 1 => Ok(1.0),
        None => median_heuristic_sigma_from_distances(distances, weights),
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be nonnegative")));
    }
    Ok(())
}

/// Solves `(W K + lambda I) alpha = W y` for the sub-problem on `idx`.
fn solve_subsystem(gram: &Matrix, weights: &[f64], responses: &[f64], idx: &[usize], lambda: f64) -> Result<Vec<f64>> {
    let n = idx.len();
    let a = Matrix::from_fn(n, |r, c| {
        let v = weights[idx[r]] * gram.get(idx[r], idx[c]);
        if r == c {
            v + lambda
        } else {
            v
        }
    });
    let b: Vec<f64> = idx.iter().map(|&i| weights[i] * responses[i]).collect();
    Ok(Lu::factor(&a)?.solve(&b))
}

impl KrrProblem {
    pub fn new(sample: &SurveySample, opts: &KrrOptions) -> Result<Self> {
        sample.validate()?;
        let metric = opts.metric.unwrap_or_else(|| sample.default_metric());
        let distances = pairwise_distances(&sample.predictors, metric)?;
        let sigma = resolve_sigma(&distances, &sample.weights, opts.sigma)?;
        let n = sample.len();
        let gram = Matrix::from_fn(n, |i, j| opts.kernel.eval(distances[i][j], sigma));
        Ok(Self {
            predictors: sample.predictors.clone(),
            distances,
            gram,
            responses: sample.responses.clone(),
            weights: sample.weights.clone(),
            sigma,
            kernel: opts.kernel,
            metric,
            sigma_per_fold: opts.sigma_per_fold && opts.sigma.is_none(),
            strategy: opts.loo,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn distances(&self) -> &[Vec<f64>] {
        &self.distances
    }

    pub fn coefficients(&self, lambda: f64) -> Result<Vec<f64>> {
        check_lambda(lambda)?;
        let idx: Vec<usize> = (0..self.len()).collect();
        solve_subsystem(&self.gram, &self.weights, &self.responses, &idx, lambda)
    }

    pub fn fit(&self, lambda: f64) -> Result<KrrModel> {
        let alpha = self.coefficients(lambda)?;
        if self.len() <= CONDITION_CHECK_MAX_N {
            let a = Matrix::from_fn(self.len(), |i, j| {
                self.weights[i] * self.gram.get(i, j) + if i == j { lambda } else { 0.0 }
            });
            let cond = Lu::factor(&a)?.condition_1norm(&a);
            if cond > CONDITION_WARN {
                log::warn!("kernel system is ill-conditioned (1-norm condition {cond:.3e}); consider a larger lambda");
            }
        }
        Ok(KrrModel {
            predictors: self.predictors.clone(),
            alpha,
            sigma: self.sigma,
            lambda,
            metric: self.metric,
            kernel: self.kernel,
        })
    }

    /// Fitted values `K alpha` on the training set.
    pub fn fitted(&self, lambda: f64) -> Result<Vec<f64>> {
        Ok(self.gram.mul_vec(&self.coefficients(lambda)?))
    }

    /// Prediction at observation `i` from a model fitted without it.
    pub fn refit_fold(&self, lambda: f64, i: usize) -> Result<f64> {
        check_lambda(lambda)?;
        let idx: Vec<usize> = (0..self.len()).filter(|j| *j != i).collect();
        if idx.is_empty() {
            return Err(Error::InvalidArgument("leave-one-out needs at least two observations".into()));
        }
        if self.sigma_per_fold {
            let sub_d: Vec<Vec<f64>> = idx.iter().map(|&r| idx.iter().map(|&c| self.distances[r][c]).collect()).collect();
            let sub_w: Vec<f64> = idx.iter().map(|&r| self.weights[r]).collect();
            let sigma = resolve_sigma(&sub_d, &sub_w, None)?;
            let gram = Matrix::from_fn(self.len(), |r, c| self.kernel.eval(self.distances[r][c], sigma));
            let alpha = solve_subsystem(&gram, &self.weights, &self.responses, &idx, lambda)?;
            return Ok(idx.iter().zip(&alpha).map(|(&j, a)| a * gram.get(i, j)).sum());
        }
        let alpha = solve_subsystem(&self.gram, &self.weights, &self.responses, &idx, lambda)?;
        Ok(idx.iter().zip(&alpha).map(|(&j, a)| a * self.gram.get(i, j)).sum())
    }

    /// Hat-matrix leave-one-out predictions `(yhat_i - H_ii y_i) / (1 - H_ii)`
    /// with `H = K (W K + lambda I)^{-1} W`; `None` where `1 - H_ii` is too small.
    fn hat_loo(&self, lambda: f64) -> Result<Vec<Option<f64>>> {
        let n = self.len();
        let a = Matrix::from_fn(n, |i, j| self.weights[i] * self.gram.get(i, j) + if i == j { lambda } else { 0.0 });
        let lu = Lu::factor(&a)?;
        let b: Vec<f64> = self.weights.iter().zip(&self.responses).map(|(w, y)| w * y).collect();
        let alpha = lu.solve(&b);
        let fitted = self.gram.mul_vec(&alpha);
        let out = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                let col = lu.solve(&e);
                let h_ii = self.weights[i] * self.gram.row(i).iter().zip(&col).map(|(k, c)| k * c).sum::<f64>();
                let denom = 1.0 - h_ii;
                (denom.abs() >= HAT_DIAG_FLOOR).then(|| (fitted[i] - h_ii * self.responses[i]) / denom)
            })
            .collect();
        Ok(out)
    }

    fn refit_all(&self, lambda: f64) -> Result<Vec<f64>> {
        (0..self.len()).into_par_iter().map(|i| self.refit_fold(lambda, i)).collect()
    }

    fn audit_indices(&self) -> Vec<usize> {
        let n = self.len();
        let k = AUDIT_FOLDS.min(n);
        let mut idx: Vec<usize> = (0..k).map(|j| j * n / k).collect();
        idx.dedup();
        idx
    }

    fn uniform_weights(&self) -> bool {
        self.weights.iter().all(|w| *w == self.weights[0])
    }

    pub fn loo(&self, lambda: f64) -> Result<LooOutcome> {
        self.loo_with(lambda, self.strategy)
    }

    pub fn loo_with(&self, lambda: f64, strategy: LooStrategy) -> Result<LooOutcome> {
        check_lambda(lambda)?;
        let n = self.len();
        if n < 2 {
            return Err(Error::InvalidArgument("leave-one-out needs at least two observations".into()));
        }
        let agree = |fast: f64, refit: f64| (fast - refit).abs() <= LOO_AGREEMENT_TOL * (1.0 + refit.abs());
        let strategy = if self.sigma_per_fold { LooStrategy::Refit } else { strategy };

        if strategy == LooStrategy::Refit {
            return Ok(LooOutcome { predictions: self.refit_all(lambda)?, refit_folds: (0..n).collect(), disagreements: vec![] });
        }

        // the shortcut needs an invertible full system; fall back to refits otherwise
        let fast = match self.hat_loo(lambda) {
            Ok(f) => f,
            Err(Error::SingularSystem) => vec![None; n],
            Err(e) => return Err(e),
        };
        let mut predictions = vec![0.0; n];
        let mut refit_folds = vec![];
        for (i, f) in fast.iter().enumerate() {
            match f {
                Some(v) => predictions[i] = *v,
                None => {
                    predictions[i] = self.refit_fold(lambda, i)?;
                    refit_folds.push(i);
                }
            }
        }

        let mut disagreements = vec![];
        match strategy {
            LooStrategy::Verified => {
                let refits = self.refit_all(lambda)?;
                for i in 0..n {
                    if !agree(predictions[i], refits[i]) {
                        disagreements.push(i);
                        predictions[i] = refits[i];
                        if !refit_folds.contains(&i) {
                            refit_folds.push(i);
                        }
                    }
                }
                refit_folds.sort_unstable();
            }
            LooStrategy::Auto if !self.uniform_weights() => {
                for i in self.audit_indices() {
                    if fast[i].is_none() {
                        continue;
                    }
                    let refit = self.refit_fold(lambda, i)?;
                    if !agree(predictions[i], refit) {
                        disagreements.push(i);
                    }
                }
                if !disagreements.is_empty() {
                    log::warn!("hat-matrix leave-one-out disagreed with refits at folds {disagreements:?}; refitting all folds");
                    return Ok(LooOutcome { predictions: self.refit_all(lambda)?, refit_folds: (0..n).collect(), disagreements });
                }
            }
            _ => {}
        }
        Ok(LooOutcome { predictions, refit_folds, disagreements })
    }

    /// Survey-weighted LOO squared error `sum w_i (y_i - yhat_{-i})^2`.
    pub fn loo_error(&self, predictions: &[f64]) -> f64 {
        predictions
            .iter()
            .zip(&self.responses)
            .zip(&self.weights)
            .map(|((p, y), w)| w * (y - p) * (y - p))
            .sum()
    }

    /// Selects lambda from `grid` by weighted LOO error, breaking ties toward
    /// the larger lambda.
    pub fn select_lambda(&self, grid: &[f64]) -> Result<LambdaSelection> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty lambda grid".into()));
        }
        if let Some(l) = grid.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {l} must be positive")));
        }
        let mut errors = Vec::with_capacity(grid.len());
        let mut outcomes = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let out = self.loo(lambda)?;
            errors.push((lambda, self.loo_error(&out.predictions)));
            outcomes.push(out.predictions);
        }
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|a, b| grid[*b].total_cmp(&grid[*a]));
        let mut best = order[0];
        for &k in &order[1..] {
            if errors[k].1 < errors[best].1 {
                best = k;
            }
        }
        Ok(LambdaSelection { lambda: grid[best], sigma: self.sigma, errors, loo: outcomes.swap_remove(best) })
    }
}

/// Fits with the Laplacian kernel and the predictor kind's default metric.
pub fn krr_fit(sample: &SurveySample, lambda: f64, sigma: Option<f64>) -> Result<KrrModel> {
    krr_fit_with(sample, lambda, &KrrOptions::with_sigma(sigma))
}

pub fn krr_fit_with(sample: &SurveySample, lambda: f64, opts: &KrrOptions) -> Result<KrrModel> {
    check_lambda(lambda)?;
    KrrProblem::new(sample, opts)?.fit(lambda)
}

/// `sum_i alpha_i K(x, X_i)`.
pub fn krr_predict(model: &KrrModel, x: &Predictor) -> Result<f64> {
    model.predict(x)
}

/// Leave-one-out predictions with `sigma` held fixed across folds.
pub fn krr_loo(sample: &SurveySample, lambda: f64, sigma: Option<f64>) -> Result<Vec<f64>> {
    Ok(krr_loo_with(sample, lambda, &KrrOptions::with_sigma(sigma))?.predictions)
}

pub fn krr_loo_with(sample: &SurveySample, lambda: f64, opts: &KrrOptions) -> Result<LooOutcome> {
    KrrProblem::new(sample, opts)?.loo(lambda)
}

pub fn krr_select_lambda(sample: &SurveySample, sigma: Option<f64>, grid: &[f64]) -> Result<f64> {
    Ok(krr_select_lambda_with(sample, grid, &KrrOptions::with_sigma(sigma))?.lambda)
}

pub fn krr_select_lambda_with(sample: &SurveySample, grid: &[f64], opts: &KrrOptions) -> Result<LambdaSelection> {
    KrrProblem::new(sample, opts)?.select_lambda(grid)
}
