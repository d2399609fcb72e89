//! Wasserstein geometry on quantile grids.
//!
//! In one dimension the 2-Wasserstein distance is the L2 distance between
//! quantile functions, so Fréchet means are pointwise averages of quantile
//! grids and all integrals over `t` use the midpoint rule on the grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Nondecreasing, nonnegative quantile values at levels `t_k = (k - 1/2) / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    values: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidGrid("grid has no levels".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidGrid(format!("value {v} is not finite and nonnegative")));
        }
        if let Some(k) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidGrid(format!("values decrease at level {}", k + 1)));
        }
        Ok(Self { values })
    }

    /// Grid of a distribution given by its quantile function.
    pub fn from_quantile_fn(m: usize, quantile: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(Self::levels(m).into_iter().map(quantile).collect())
    }

    /// Constant grid of a point mass.
    pub fn point_mass(m: usize, at: f64) -> Result<Self> {
        Self::new(vec![at; m])
    }

    /// Probability levels `(k - 1/2) / m`, `k = 1..=m`.
    pub fn levels(m: usize) -> Vec<f64> {
        (1..=m).map(|k| (k as f64 - 0.5) / m as f64).collect()
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Mean of the distribution, approximated by the average grid value.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(g: QuantileGrid) -> Self {
        g.values
    }
}

fn check_same_grid(a: &QuantileGrid, b: &QuantileGrid) -> Result<()> {
    if a.m() != b.m() {
        return Err(Error::GridMismatch { left: a.m(), right: b.m() });
    }
    Ok(())
}

/// Squared 2-Wasserstein distance on the grid: `(1/m) sum_k (a_k - b_k)^2`.
pub fn wasserstein2_squared(a: &QuantileGrid, b: &QuantileGrid) -> Result<f64> {
    check_same_grid(a, b)?;
    let ss: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(ss / a.m() as f64)
}

pub fn wasserstein2(a: &QuantileGrid, b: &QuantileGrid) -> Result<f64> {
    wasserstein2_squared(a, b).map(f64::sqrt)
}

/// Symmetric matrix of pairwise Wasserstein distances, row-major.
pub fn distance_matrix(grids: &[QuantileGrid]) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = grids.first() {
        for g in grids {
            check_same_grid(first, g)?;
        }
    }
    let n = grids.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| wasserstein2(&grids[i], &grids[j]).unwrap()).collect())
        .collect();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for (off, v) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            d[i][j] = *v;
            d[j][i] = *v;
        }
    }
    Ok(d)
}

/// Normalized weights, or `None` for the unweighted path.
fn normalized_weights(n: usize, weights: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
    let Some(w) = weights else { return Ok(None) };
    if w.len() != n {
        return Err(Error::LengthMismatch(format!("{} grids but {} weights", n, w.len())));
    }
    if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidWeights("weights must be positive and finite".into()));
    }
    let total: f64 = w.iter().sum();
    Ok(Some(w.iter().map(|x| x / total).collect()))
}

fn check_grids(grids: &[QuantileGrid]) -> Result<usize> {
    let first = grids.first().ok_or(Error::EmptyInput("no quantile grids"))?;
    for g in grids {
        check_same_grid(first, g)?;
    }
    Ok(first.m())
}

/// Pointwise (weighted) average of the grids; uniform weights when `weights` is `None`.
pub fn frechet_mean(grids: &[QuantileGrid], weights: Option<&[f64]>) -> Result<QuantileGrid> {
    let m = check_grids(grids)?;
    let n = grids.len();
    let mut acc = vec![0.0; m];
    match normalized_weights(n, weights)? {
        Some(w) => {
            for (g, wi) in grids.iter().zip(&w) {
                for (a, v) in acc.iter_mut().zip(&g.values) {
                    *a += wi * v;
                }
            }
        }
        None => {
            for g in grids {
                for (a, v) in acc.iter_mut().zip(&g.values) {
                    *a += v;
                }
            }
            for a in &mut acc {
                *a /= n as f64;
            }
        }
    }
    QuantileGrid::new(acc)
}

/// Per-observation multipliers applied to squared deviations: `1/(n-1)`
/// unweighted, normalized survey weights otherwise.
fn deviation_factors(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match normalized_weights(n, weights)? {
        Some(w) => Ok(w),
        None if n < 2 => Err(Error::VarianceUndefined),
        None => Ok(vec![1.0 / (n - 1) as f64; n]),
    }
}

/// Fréchet variance: average squared Wasserstein distance to `mean`.
///
/// Unweighted, the divisor is `n - 1`; with weights, the weights are
/// normalized to sum to one.
pub fn frechet_variance(grids: &[QuantileGrid], mean: &QuantileGrid, weights: Option<&[f64]>) -> Result<f64> {
    check_grids(grids)?;
    check_same_grid(&grids[0], mean)?;
    let factors = deviation_factors(grids.len(), weights)?;
    let mut total = 0.0;
    for (g, f) in grids.iter().zip(&factors) {
        total += f * wasserstein2_squared(g, mean)?;
    }
    Ok(total)
}

/// Pointwise standard deviation of the quantile values at each level, with
/// the same divisor convention as [`frechet_variance`].
pub fn pointwise_sd_curve(grids: &[QuantileGrid], mean: &QuantileGrid, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let m = check_grids(grids)?;
    check_same_grid(&grids[0], mean)?;
    let factors = deviation_factors(grids.len(), weights)?;
    let mut var = vec![0.0; m];
    for (g, f) in grids.iter().zip(&factors) {
        for ((acc, v), mu) in var.iter_mut().zip(&g.values).zip(&mean.values) {
            *acc += f * (v - mu) * (v - mu);
        }
    }
    Ok(var.into_iter().map(f64::sqrt).collect())
}

/// Fréchet mean, variance and pointwise spread of a group of grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetSummary {
    pub mean: QuantileGrid,
    pub variance: f64,
    pub pointwise_sd: Vec<f64>,
}

/// Computes all three summaries. A single unweighted grid has zero spread.
pub fn frechet_summary(grids: &[QuantileGrid], weights: Option<&[f64]>) -> Result<FrechetSummary> {
    let mean = frechet_mean(grids, weights)?;
    if weights.is_none() && grids.len() == 1 {
        let m = mean.m();
        return Ok(FrechetSummary { mean, variance: 0.0, pointwise_sd: vec![0.0; m] });
    }
    let variance = frechet_variance(grids, &mean, weights)?;
    let pointwise_sd = pointwise_sd_curve(grids, &mean, weights)?;
    Ok(FrechetSummary { mean, variance, pointwise_sd })
}

/// Weighted Fréchet objective `sum_i w_i d^2(g_i, q)`.
pub fn frechet_objective(grids: &[QuantileGrid], weights: &[f64], q: &QuantileGrid) -> Result<f64> {
    let mut total = 0.0;
    for (g, w) in grids.iter().zip(weights) {
        total += w * wasserstein2_squared(g, q)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pm(at: f64) -> QuantileGrid {
        QuantileGrid::point_mass(16, at).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(QuantileGrid::new(vec![]).is_err());
        assert!(QuantileGrid::new(vec![1.0, 0.5]).is_err());
        assert!(QuantileGrid::new(vec![-1.0, 0.5]).is_err());
        assert!(QuantileGrid::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein2(&pm(3.0), &pm(3.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(wasserstein2(&pm(2.0), &pm(5.0)).unwrap(), 3.0, epsilon = 1e-15);
        let u1 = QuantileGrid::from_quantile_fn(1000, |t| t).unwrap();
        let u2 = QuantileGrid::from_quantile_fn(1000, |t| 2.0 * t).unwrap();
        assert_abs_diff_eq!(wasserstein2(&u1, &u2).unwrap(), (1.0f64 / 3.0).sqrt(), epsilon = 1e-3);
        let short = QuantileGrid::point_mass(3, 1.0).unwrap();
        assert_eq!(wasserstein2(&pm(1.0), &short), Err(Error::GridMismatch { left: 16, right: 3 }));
    }

    #[test]
    fn grid_refinement_is_first_order() {
        // midpoint rule error for int t^2 is -1/(12 m^2) relative to 1/3
        let exact = (1.0f64 / 3.0).sqrt();
        for m in [50usize, 100, 200, 400] {
            let d = |m| {
                let a = QuantileGrid::from_quantile_fn(m, |t| t).unwrap();
                let b = QuantileGrid::from_quantile_fn(m, |t| 2.0 * t).unwrap();
                wasserstein2(&a, &b).unwrap()
            };
            assert!((d(m) - d(2 * m)).abs() <= 1.0 / m as f64);
            assert!((d(m) - exact).abs() <= 1.0 / m as f64);
        }
    }

    #[test]
    fn mean_examples() {
        let g = QuantileGrid::new(vec![0.0, 1.0, 5.0]).unwrap();
        assert_eq!(frechet_mean(&[g.clone(), g.clone()], None).unwrap(), g);
        assert_eq!(frechet_mean(&[pm(0.0), pm(4.0)], None).unwrap(), pm(2.0));
        assert_eq!(frechet_mean(&[pm(0.0), pm(4.0)], Some(&[1.0, 3.0])).unwrap(), pm(3.0));
        assert!(frechet_mean(&[], None).is_err());
        assert!(frechet_mean(&[pm(0.0)], Some(&[0.0])).is_err());
    }

    #[test]
    fn variance_examples() {
        let grids = [pm(0.0), pm(4.0)];
        let mean = frechet_mean(&grids, None).unwrap();
        assert_abs_diff_eq!(frechet_variance(&grids, &mean, None).unwrap(), 8.0, epsilon = 1e-12);
        let sd = pointwise_sd_curve(&grids, &mean, None).unwrap();
        assert!(sd.iter().all(|s| (s - 8f64.sqrt()).abs() < 1e-12));

        let same = [pm(1.0), pm(1.0), pm(1.0)];
        let m1 = frechet_mean(&same, None).unwrap();
        assert_eq!(frechet_variance(&same, &m1, None).unwrap(), 0.0);
        assert!(pointwise_sd_curve(&same, &m1, None).unwrap().iter().all(|s| *s == 0.0));

        assert_eq!(frechet_variance(&[pm(1.0)], &pm(1.0), None), Err(Error::VarianceUndefined));
        assert_eq!(frechet_variance(&[pm(1.0)], &pm(1.0), Some(&[2.0])).unwrap(), 0.0);
    }

    #[test]
    fn summary_of_single_grid() {
        let s = frechet_summary(&[pm(2.0)], None).unwrap();
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.mean, pm(2.0));
    }

    #[test]
    fn distance_matrix_is_symmetric() {
        let grids = [pm(0.0), pm(1.0), QuantileGrid::from_quantile_fn(16, |t| 3.0 * t).unwrap()];
        let d = distance_matrix(&grids).unwrap();
        for i in 0..3 {
            assert_eq!(d[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(d[i][j], d[j][i]);
                assert_eq!(d[i][j], wasserstein2(&grids[i], &grids[j]).unwrap());
            }
        }
    }

    fn arb_grid(m: usize) -> impl Strategy<Value = QuantileGrid> {
        proptest::collection::vec(0.0f64..10.0, m).prop_map(|inc| {
            let mut acc = 0.0;
            QuantileGrid::new(
                inc.into_iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(a in arb_grid(12), b in arb_grid(12), c in arb_grid(12)) {
            let ab = wasserstein2(&a, &b).unwrap();
            let ba = wasserstein2(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
            let ac = wasserstein2(&a, &c).unwrap();
            let cb = wasserstein2(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn variance_is_translation_invariant(gs in proptest::collection::vec(arb_grid(8), 2..6), shift in 0.0f64..50.0) {
            let mean = frechet_mean(&gs, None).unwrap();
            let v = frechet_variance(&gs, &mean, None).unwrap();
            let moved: Vec<_> = gs.iter().map(|g| QuantileGrid::new(g.values().iter().map(|x| x + shift).collect()).unwrap()).collect();
            let mmean = frechet_mean(&moved, None).unwrap();
            let mv = frechet_variance(&moved, &mmean, None).unwrap();
            prop_assert!((v - mv).abs() <= 1e-9 * (1.0 + v));
        }

        #[test]
        fn pointwise_variance_integrates_to_frechet_variance(
            gs in proptest::collection::vec(arb_grid(10), 2..6),
            w in proptest::collection::vec(0.1f64..5.0, 6),
        ) {
            for weights in [None, Some(&w[..gs.len()])] {
                let mean = frechet_mean(&gs, weights).unwrap();
                let v = frechet_variance(&gs, &mean, weights).unwrap();
                let sd = pointwise_sd_curve(&gs, &mean, weights).unwrap();
                let integral = sd.iter().map(|s| s * s).sum::<f64>() / 10.0;
                prop_assert!((v - integral).abs() <= 1e-9 * (1.0 + v));
            }
        }
    }
}
