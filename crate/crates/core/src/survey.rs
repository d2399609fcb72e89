//! Horvitz–Thompson weighted statistics.
//!
//! Every unit carries a weight `w = 1 / pi`, where `pi` is its inclusion
//! probability. All statistics here depend on the weights only through their
//! ratios, so rescaling the weights leaves them unchanged.

use crate::{Error, Result};

/// Values paired with positive survey weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedScalarSample {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedScalarSample {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_weights(values.len(), &weights)?;
        Ok(Self { values, weights })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn check_weights(n: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n {
        return Err(Error::LengthMismatch(format!("{n} values but {} weights", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!("weight {w} is not positive and finite")));
    }
    Ok(())
}

/// Normalized Horvitz–Thompson mean `sum w_i y_i / sum w_i`.
pub fn ht_mean(s: &WeightedScalarSample) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyInput("weighted sample"));
    }
    check_weights(s.len(), &s.weights)?;
    let total: f64 = s.weights.iter().sum();
    let acc: f64 = s.values.iter().zip(&s.weights).map(|(y, w)| w * y).sum();
    Ok(acc / total)
}

/// Left-continuous weighted median `inf { x : F_w(x) >= 1/2 }`.
pub fn weighted_median(s: &WeightedScalarSample) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyInput("weighted sample"));
    }
    check_weights(s.len(), &s.weights)?;
    let mut pairs: Vec<(f64, f64)> = s.values.iter().copied().zip(s.weights.iter().copied()).collect();
    Ok(weighted_median_of_pairs(&mut pairs))
}

/// `pairs` are `(value, weight)`; sorted in place.
fn weighted_median_of_pairs(pairs: &mut [(f64, f64)]) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let half = 0.5 * total;
    let mut cum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        // the step function only jumps once per distinct value
        let x = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == x {
            cum += pairs[i].1;
            i += 1;
        }
        if cum >= half {
            return x;
        }
    }
    pairs[pairs.len() - 1].0
}

/// Median heuristic for a kernel scale: the square root of the weighted
/// median of squared pairwise distances, each pair `i < j` weighted by
/// `w_i * w_j`.
pub fn median_heuristic_sigma<P>(predictors: &[P], weights: &[f64], distance: impl Fn(&P, &P) -> f64) -> Result<f64> {
    check_weights(predictors.len(), weights)?;
    let n = predictors.len();
    if n < 2 {
        return Err(Error::DegeneratePredictors);
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(&predictors[i], &predictors[j]);
            pairs.push((d * d, weights[i] * weights[j]));
        }
    }
    sigma_from_squared_pairs(pairs)
}

/// Same as [`median_heuristic_sigma`] over a precomputed distance matrix.
pub fn median_heuristic_sigma_from_distances(distances: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    let n = distances.len();
    check_weights(n, weights)?;
    if n < 2 {
        return Err(Error::DegeneratePredictors);
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = distances[i][j];
            pairs.push((d * d, weights[i] * weights[j]));
        }
    }
    sigma_from_squared_pairs(pairs)
}

fn sigma_from_squared_pairs(mut pairs: Vec<(f64, f64)>) -> Result<f64> {
    if pairs.iter().all(|p| p.0 == 0.0) {
        return Err(Error::DegeneratePredictors);
    }
    let med = weighted_median_of_pairs(&mut pairs);
    if med > 0.0 {
        Ok(med.sqrt())
    } else {
        // more than half the pair mass sits on exact duplicates
        Err(Error::DegeneratePredictors)
    }
}

/// Survey-weighted leave-one-out R²:
/// `1 - sum w_i (y_i - yhat_i)^2 / sum w_i (y_i - ybar_w)^2`.
pub fn weighted_r2(y: &[f64], yhat_loo: &[f64], weights: &[f64]) -> Result<f64> {
    if y.len() != yhat_loo.len() {
        return Err(Error::LengthMismatch(format!("{} responses but {} predictions", y.len(), yhat_loo.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("responses"));
    }
    let ybar = ht_mean(&WeightedScalarSample::new(y.to_vec(), weights.to_vec())?)?;
    let mut rss = 0.0;
    let mut tss = 0.0;
    for ((yi, fi), wi) in y.iter().zip(yhat_loo).zip(weights) {
        rss += wi * (yi - fi) * (yi - fi);
        tss += wi * (yi - ybar) * (yi - ybar);
    }
    if !(tss > 0.0) {
        return Err(Error::ZeroVarianceResponse);
    }
    Ok(1.0 - rss / tss)
}
