//! Analysis drivers: leave-one-out R² comparison of representations, binary
//! outcome classification with the survey smoother, risk groups, age strata
//! and per-group Fréchet profiles.

use std::fmt;

use crate::geometry::{frechet_summary, FrechetSummary, QuantileGrid};
use crate::regression::{
    distance_quantiles, nw_loo_from_distances, nw_select_bandwidth_from_distances, pairwise_distances,
    KrrOptions, KrrProblem, NwConfig, NwKernel, SurveySample,
};
use crate::survey::weighted_r2;
use crate::{Error, Result};

/// Thirteen log-spaced values from `1e-4` to `1e2`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..13).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect()
}

/// Pairwise-distance quantiles at `0.05, 0.15, ..., 0.95`, keeping the
/// distinct positive ones.
pub fn default_bandwidth_grid(distances: &[Vec<f64>]) -> Result<Vec<f64>> {
    let probs: Vec<f64> = (0..10).map(|k| 0.05 + 0.1 * k as f64).collect();
    let mut grid: Vec<f64> = distance_quantiles(distances, &probs).into_iter().filter(|h| *h > 0.0).collect();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::DegeneratePredictors);
    }
    Ok(grid)
}

/// Result of fitting one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationFit {
    pub r2: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub loo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2Comparison {
    pub response: String,
    pub distribution: RepresentationFit,
    pub tac: RepresentationFit,
}

impl R2Comparison {
    pub fn r2_distribution(&self) -> f64 {
        self.distribution.r2
    }

    pub fn r2_tac(&self) -> f64 {
        self.tac.r2
    }
}

/// Kernel ridge regression with lambda chosen by weighted LOO error, scored
/// by the survey-weighted leave-one-out R².
pub fn fit_representation(sample: &SurveySample, lambda_grid: &[f64], opts: &KrrOptions) -> Result<RepresentationFit> {
    let problem = KrrProblem::new(sample, opts)?;
    let sel = problem.select_lambda(lambda_grid)?;
    let r2 = weighted_r2(&sample.responses, &sel.loo, &sample.weights)?;
    Ok(RepresentationFit { r2, lambda: sel.lambda, sigma: sel.sigma, loo: sel.loo })
}

/// Compares the distributional representation against a scalar TAC
/// predictor for the same subjects, responses and weights.
pub fn compare_r2(
    distribution_sample: &SurveySample,
    tac_sample: &SurveySample,
    response_name: &str,
    lambda_grid: &[f64],
) -> Result<R2Comparison> {
    if distribution_sample.responses != tac_sample.responses || distribution_sample.weights != tac_sample.weights {
        return Err(Error::InvalidArgument("samples must share responses and weights".into()));
    }
    let opts = KrrOptions::default();
    Ok(R2Comparison {
        response: response_name.to_string(),
        distribution: fit_representation(distribution_sample, lambda_grid, &opts)?,
        tac: fit_representation(tac_sample, lambda_grid, &opts)?,
    })
}

/// Weighted confusion counts; "positive" is the outcome coded 1.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightedConfusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
}

impl WeightedConfusion {
    pub fn total(&self) -> f64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) / self.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPrediction {
    /// `None` when the subject had no neighbours in its leave-one-out fit.
    pub probability: Option<f64>,
    pub predicted: Option<bool>,
    pub actual: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationOutcome {
    pub subjects: Vec<SubjectPrediction>,
    pub confusion: WeightedConfusion,
    pub threshold: f64,
    pub bandwidth: f64,
}

impl ClassificationOutcome {
    /// Weighted empirical AUC over classified subjects; `None` if either
    /// class is absent.
    pub fn auc(&self) -> Option<f64> {
        let scored: Vec<(f64, bool, f64)> =
            self.subjects.iter().filter_map(|s| s.probability.map(|p| (p, s.actual, s.weight))).collect();
        let pos: f64 = scored.iter().filter(|s| s.1).map(|s| s.2).sum();
        let neg: f64 = scored.iter().filter(|s| !s.1).map(|s| s.2).sum();
        if pos == 0.0 || neg == 0.0 {
            return None;
        }
        let mut acc = 0.0;
        for a in scored.iter().filter(|s| s.1) {
            for b in scored.iter().filter(|s| !s.1) {
                let win = if a.0 > b.0 {
                    1.0
                } else if a.0 == b.0 {
                    0.5
                } else {
                    0.0
                };
                acc += a.2 * b.2 * win;
            }
        }
        Some(acc / (pos * neg))
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must lie in [0, 1]")));
    }
    Ok(())
}

fn check_binary(sample: &SurveySample) -> Result<()> {
    sample.validate()?;
    if !sample.is_binary() {
        return Err(Error::InvalidArgument("responses must be 0 or 1".into()));
    }
    if sample.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two observations".into()));
    }
    Ok(())
}

fn outcome_from_loo(sample: &SurveySample, loo: Vec<Option<f64>>, threshold: f64, bandwidth: f64) -> ClassificationOutcome {
    let mut confusion = WeightedConfusion::default();
    let subjects = loo
        .into_iter()
        .zip(&sample.responses)
        .zip(&sample.weights)
        .map(|((p, y), w)| {
            let actual = *y == 1.0;
            let predicted = p.map(|p| p >= threshold);
            match (predicted, actual) {
                (Some(true), true) => confusion.tp += w,
                (Some(true), false) => confusion.fp += w,
                (Some(false), false) => confusion.tn += w,
                (Some(false), true) => confusion.fn_ += w,
                (None, _) => {}
            }
            SubjectPrediction { probability: p, predicted, actual, weight: *w }
        })
        .collect();
    ClassificationOutcome { subjects, confusion, threshold, bandwidth }
}

/// Leave-one-out smoother probabilities thresholded into labels, with
/// survey-weighted confusion counts.
pub fn classify_mortality(sample: &SurveySample, cfg: &NwConfig, threshold: f64) -> Result<ClassificationOutcome> {
    check_binary(sample)?;
    check_threshold(threshold)?;
    let d = pairwise_distances(&sample.predictors, cfg.metric)?;
    let loo = nw_loo_from_distances(&d, &sample.responses, &sample.weights, cfg.bandwidth, cfg.kernel);
    Ok(outcome_from_loo(sample, loo, threshold, cfg.bandwidth))
}

/// As [`classify_mortality`], choosing the bandwidth first by weighted LOO
/// error over `h_grid` (or [`default_bandwidth_grid`]).
pub fn classify_with_selected_bandwidth(
    sample: &SurveySample,
    kernel: NwKernel,
    threshold: f64,
    h_grid: Option<&[f64]>,
) -> Result<ClassificationOutcome> {
    check_binary(sample)?;
    check_threshold(threshold)?;
    let metric = sample.default_metric();
    let d = pairwise_distances(&sample.predictors, metric)?;
    let grid = match h_grid {
        Some(g) => g.to_vec(),
        None => default_bandwidth_grid(&d)?,
    };
    let h = nw_select_bandwidth_from_distances(&d, &sample.responses, &sample.weights, kernel, &grid)?;
    let loo = nw_loo_from_distances(&d, &sample.responses, &sample.weights, h, kernel);
    Ok(outcome_from_loo(sample, loo, threshold, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RiskGroup {
    /// Predicted to die but survived.
    Risk,
    /// Predicted to survive and survived.
    NonRisk,
    Unassigned,
}

impl RiskGroup {
    pub fn label(&self) -> &'static str {
        match self {
            RiskGroup::Risk => "A",
            RiskGroup::NonRisk => "B",
            RiskGroup::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for RiskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// `predicted` and `died` use the outcome coding: `true` means death.
pub fn risk_group(predicted: Option<bool>, died: bool) -> RiskGroup {
    match (predicted, died) {
        (Some(true), false) => RiskGroup::Risk,
        (Some(false), false) => RiskGroup::NonRisk,
        _ => RiskGroup::Unassigned,
    }
}

pub fn assign_risk_groups(outcome: &ClassificationOutcome) -> Vec<RiskGroup> {
    outcome.subjects.iter().map(|s| risk_group(s.predicted, s.actual)).collect()
}

/// Closed whole-year age bands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgeStratification {
    pub bands: Vec<(u32, u32)>,
}

impl Default for AgeStratification {
    fn default() -> Self {
        Self { bands: vec![(68, 75), (76, 80), (81, 85)] }
    }
}

impl AgeStratification {
    /// Index of the band containing `age`.
    pub fn assign(&self, age: f64) -> Result<usize> {
        if age.fract() != 0.0 || !age.is_finite() {
            return Err(Error::InvalidArgument(format!("age {age} is not a whole number of years")));
        }
        self.bands
            .iter()
            .position(|(lo, hi)| age >= *lo as f64 && age <= *hi as f64)
            .ok_or(Error::OutsideTargetPopulation(age))
    }

    pub fn label(&self, band: usize) -> String {
        let (lo, hi) = self.bands[band];
        format!("{lo}-{hi}")
    }
}

/// Assigns each age to one of the 68–75, 76–80 and 81–85 bands.
pub fn stratify_age(ages: &[f64]) -> Vec<Result<usize>> {
    let strata = AgeStratification::default();
    ages.iter().map(|a| strata.assign(*a)).collect()
}

/// Survey-weighted Fréchet summary for each requested group. Groups without
/// members are skipped with a warning.
pub fn group_profiles<L: PartialEq + Clone + fmt::Debug>(
    grids: &[QuantileGrid],
    weights: &[f64],
    labels: &[L],
    groups: &[L],
) -> Result<Vec<(L, FrechetSummary)>> {
    if grids.len() != weights.len() || grids.len() != labels.len() {
        return Err(Error::LengthMismatch("grids, weights and labels differ in length".into()));
    }
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let idx: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == *g).collect();
        if idx.is_empty() {
            log::warn!("group {g:?} has no members; skipped");
            continue;
        }
        let gs: Vec<QuantileGrid> = idx.iter().map(|i| grids[*i].clone()).collect();
        let ws: Vec<f64> = idx.iter().map(|i| weights[*i]).collect();
        out.push((g.clone(), frechet_summary(&gs, Some(&ws))?));
    }
    Ok(out)
}
