//! Survey-weighted nonparametric regression over distributional or scalar
//! predictors: a Nadaraya–Watson smoother and kernel ridge regression.

mod krr;
mod nw;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{wasserstein2, QuantileGrid};
use crate::survey::check_weights;
use crate::{Error, Result};

pub use krr::{
    krr_fit, krr_fit_with, krr_loo, krr_loo_with, krr_predict, krr_select_lambda, krr_select_lambda_with,
    laplacian_kernel, KrrKernel, KrrModel, KrrOptions, KrrProblem, LambdaSelection, LooOutcome, LooStrategy,
    LOO_AGREEMENT_TOL,
};
pub use nw::{
    nw_loo, nw_loo_from_distances, nw_predict, nw_select_bandwidth, nw_select_bandwidth_from_distances,
    NwConfig, NwKernel,
};

/// A regression input: a distribution (as a quantile grid) or a scalar summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Grid(QuantileGrid),
    Scalar(f64),
}

impl Predictor {
    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Grid(_) => "grid",
            Predictor::Scalar(_) => "scalar",
        }
    }
}

impl From<QuantileGrid> for Predictor {
    fn from(g: QuantileGrid) -> Self {
        Predictor::Grid(g)
    }
}

impl From<f64> for Predictor {
    fn from(x: f64) -> Self {
        Predictor::Scalar(x)
    }
}

/// Distance between predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// 2-Wasserstein distance between quantile grids.
    Wasserstein,
    /// Absolute difference (the l1 distance) between scalars.
    Absolute,
}

impl Metric {
    pub fn default_for(p: &Predictor) -> Metric {
        match p {
            Predictor::Grid(_) => Metric::Wasserstein,
            Predictor::Scalar(_) => Metric::Absolute,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Wasserstein => "wasserstein",
            Metric::Absolute => "absolute",
        }
    }

    pub fn distance(&self, a: &Predictor, b: &Predictor) -> Result<f64> {
        match (self, a, b) {
            (Metric::Wasserstein, Predictor::Grid(x), Predictor::Grid(y)) => wasserstein2(x, y),
            (Metric::Absolute, Predictor::Scalar(x), Predictor::Scalar(y)) => Ok((x - y).abs()),
            _ => Err(Error::PredictorKind(self.name())),
        }
    }
}

/// Paired predictors, responses and survey weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySample {
    pub predictors: Vec<Predictor>,
    pub responses: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SurveySample {
    pub fn new(predictors: Vec<Predictor>, responses: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let s = Self { predictors, responses, weights };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.predictors.len();
        if n == 0 {
            return Err(Error::EmptyInput("survey sample"));
        }
        if self.responses.len() != n {
            return Err(Error::LengthMismatch(format!("{n} predictors but {} responses", self.responses.len())));
        }
        check_weights(n, &self.weights)?;
        if let Some(y) = self.responses.iter().find(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument(format!("response {y} is not finite")));
        }
        let first = &self.predictors[0];
        for p in &self.predictors {
            match (first, p) {
                (Predictor::Grid(a), Predictor::Grid(b)) if a.m() != b.m() => {
                    return Err(Error::GridMismatch { left: a.m(), right: b.m() })
                }
                (Predictor::Grid(_), Predictor::Grid(_)) => {}
                (Predictor::Scalar(_), Predictor::Scalar(x)) if x.is_finite() => {}
                _ => return Err(Error::InvalidArgument("predictors must be all grids or all finite scalars".into())),
            }
        }
        Ok(())
    }

    /// True when every response is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.responses.iter().all(|y| *y == 0.0 || *y == 1.0)
    }

    pub fn default_metric(&self) -> Metric {
        Metric::default_for(&self.predictors[0])
    }

    /// Copy of the sample without observation `i`.
    pub fn without(&self, i: usize) -> SurveySample {
        let drop = |v: &[f64]| v.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| *x).collect();
        SurveySample {
            predictors: self.predictors.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p.clone()).collect(),
            responses: drop(&self.responses),
            weights: drop(&self.weights),
        }
    }
}

/// Pairwise distance matrix under `metric`, computed in parallel over rows.
pub fn pairwise_distances(predictors: &[Predictor], metric: Metric) -> Result<Vec<Vec<f64>>> {
    let n = predictors.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| metric.distance(&predictors[i], &predictors[j])).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut d = vec![vec![0.0; n]; n];
    for (i, row) in upper.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            d[i][i + 1 + off] = *v;
            d[i + 1 + off][i] = *v;
        }
    }
    Ok(d)
}

/// Distances from `x` to every predictor.
pub(crate) fn distances_to(predictors: &[Predictor], metric: Metric, x: &Predictor) -> Result<Vec<f64>> {
    predictors.iter().map(|p| metric.distance(p, x)).collect()
}

/// Type-7 quantiles of the off-diagonal pairwise distances.
pub fn distance_quantiles(distances: &[Vec<f64>], probs: &[f64]) -> Vec<f64> {
    let n = distances.len();
    let mut all = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            all.push(distances[i][j]);
        }
    }
    if all.is_empty() {
        return vec![];
    }
    all.sort_by(f64::total_cmp);
    probs.iter().map(|p| crate::distribution::quantile_type7(&all, *p)).collect()
}
