//! Nadaraya–Watson smoother with survey weights.
//!
//! The prediction at `x` is `sum_i s_i(x) y_i` with
//! `s_i(x) = K(d(X_i, x) / h) w_i / sum_j K(d(X_j, x) / h) w_j`,
//! a convex combination of the observed responses.

use rayon::prelude::*;

use super::{distances_to, pairwise_distances, Metric, Predictor, SurveySample};
use crate::{Error, Result};

/// Univariate smoothing kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NwKernel {
    #[default]
    Gaussian,
    /// Compact support on `[-1, 1]`.
    Epanechnikov,
}

impl NwKernel {
    /// Logarithm of the kernel up to an additive constant; `-inf` outside the support.
    fn log_value(&self, u: f64) -> f64 {
        match self {
            NwKernel::Gaussian => -0.5 * u * u,
            NwKernel::Epanechnikov if u.abs() < 1.0 => (1.0 - u * u).ln(),
            NwKernel::Epanechnikov => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NwConfig {
    pub bandwidth: f64,
    pub kernel: NwKernel,
    pub metric: Metric,
}

impl NwConfig {
    pub fn gaussian(bandwidth: f64, metric: Metric) -> Self {
        Self { bandwidth, kernel: NwKernel::Gaussian, metric }
    }

    pub fn with_bandwidth(&self, bandwidth: f64) -> Self {
        Self { bandwidth, ..*self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::InvalidArgument(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        Ok(())
    }
}

/// Weighted average of `y` under kernel weights at the given distances.
///
/// Kernel values are rescaled by their maximum before weighting, which leaves
/// the ratio unchanged and keeps far-away queries from underflowing.
fn smooth<'a>(
    obs: impl Iterator<Item = (f64, f64, f64)> + Clone + 'a,
    h: f64,
    kernel: NwKernel,
) -> Option<f64> {
    let max_log = obs.clone().map(|(d, _, _)| kernel.log_value(d / h)).fold(f64::NEG_INFINITY, f64::max);
    if max_log == f64::NEG_INFINITY {
        return None;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, y, w) in obs {
        let k = (kernel.log_value(d / h) - max_log).exp() * w;
        num += k * y;
        den += k;
    }
    (den > 0.0).then(|| num / den)
}

pub fn nw_predict(sample: &SurveySample, cfg: &NwConfig, x: &Predictor) -> Result<f64> {
    sample.validate()?;
    cfg.validate()?;
    let d = distances_to(&sample.predictors, cfg.metric, x)?;
    let obs = d.iter().zip(&sample.responses).zip(&sample.weights).map(|((d, y), w)| (*d, *y, *w));
    smooth(obs, cfg.bandwidth, cfg.kernel).ok_or(Error::EmptyNeighborhood)
}

/// Leave-one-out predictions; `None` where observation `i` has no neighbours
/// once it is removed.
pub fn nw_loo(sample: &SurveySample, cfg: &NwConfig) -> Result<Vec<Option<f64>>> {
    sample.validate()?;
    cfg.validate()?;
    if sample.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two observations".into()));
    }
    let d = pairwise_distances(&sample.predictors, cfg.metric)?;
    Ok(nw_loo_from_distances(&d, &sample.responses, &sample.weights, cfg.bandwidth, cfg.kernel))
}

pub fn nw_loo_from_distances(d: &[Vec<f64>], y: &[f64], w: &[f64], h: f64, kernel: NwKernel) -> Vec<Option<f64>> {
    (0..y.len())
        .into_par_iter()
        .map(|i| {
            let obs = (0..y.len()).filter(move |j| *j != i).map(move |j| (d[i][j], y[j], w[j]));
            smooth(obs, h, kernel)
        })
        .collect()
}

/// Survey-weighted LOO squared error, or `None` if any prediction is missing.
fn loo_error(d: &[Vec<f64>], y: &[f64], w: &[f64], h: f64, kernel: NwKernel) -> Option<f64> {
    let preds = nw_loo_from_distances(d, y, w, h, kernel);
    let mut err = 0.0;
    for ((p, yi), wi) in preds.iter().zip(y).zip(w) {
        let p = (*p)?;
        err += wi * (yi - p) * (yi - p);
    }
    Some(err)
}

/// Bandwidth from `h_grid` minimizing `sum w_i (y_i - yhat_{-i})^2`; ties go
/// to the smaller bandwidth. Bandwidths leaving any observation without
/// neighbours are skipped.
pub fn nw_select_bandwidth(sample: &SurveySample, cfg: &NwConfig, h_grid: &[f64]) -> Result<f64> {
    sample.validate()?;
    if sample.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two observations".into()));
    }
    let d = pairwise_distances(&sample.predictors, cfg.metric)?;
    nw_select_bandwidth_from_distances(&d, &sample.responses, &sample.weights, cfg.kernel, h_grid)
}

pub fn nw_select_bandwidth_from_distances(
    d: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    kernel: NwKernel,
    h_grid: &[f64],
) -> Result<f64> {
    if h_grid.is_empty() {
        return Err(Error::InvalidArgument("empty bandwidth grid".into()));
    }
    if let Some(h) = h_grid.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth {h} must be positive")));
    }
    let mut grid = h_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for h in grid {
        if let Some(err) = loo_error(d, y, w, h, kernel) {
            if best.is_none_or(|(_, e)| err < e) {
                best = Some((h, err));
            }
        }
    }
    best.map(|(h, _)| h).ok_or(Error::EmptyNeighborhood)
}
