//! Mixed inactive/active distributional representation of an activity series.
//!
//! A subject's readings define a distribution with a point mass at the
//! inactivity level (zero, or the lower censoring cutoff) and a continuous
//! active part. The active part is kept as a quantile grid for modelling and,
//! optionally, as a Gaussian kernel density estimate for display.

use std::collections::BTreeMap;

use crate::geometry::QuantileGrid;
use crate::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Kernel contributions beyond this many bandwidths are below 1e-14 and skipped.
const KERNEL_CUTOFF: f64 = 8.0;
/// Bandwidth used when the active sample is too degenerate for Silverman's rule.
pub const FALLBACK_BANDWIDTH: f64 = 1.0;

/// A covariate attached to a subject.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    Number(f64),
    Label(String),
}

impl Covariate {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Covariate::Number(x) => Some(*x),
            Covariate::Label(_) => None,
        }
    }
}

impl std::fmt::Display for Covariate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Covariate::Number(x) => write!(f, "{x}"),
            Covariate::Label(s) => f.write_str(s),
        }
    }
}

/// One subject's timestamped readings together with their survey weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySeries {
    pub subject_id: String,
    /// Minutes since an arbitrary epoch, strictly increasing.
    pub timestamps: Vec<f64>,
    /// Nonnegative activity counts, one per timestamp.
    pub readings: Vec<f64>,
    /// `1 / pi` for the subject's inclusion probability `pi`.
    pub survey_weight: f64,
    pub covariates: BTreeMap<String, Covariate>,
}

impl ActivitySeries {
    /// Builds a series and checks its invariants.
    pub fn new(
        subject_id: impl Into<String>,
        timestamps: Vec<f64>,
        readings: Vec<f64>,
        survey_weight: f64,
    ) -> Result<Self> {
        let series = Self {
            subject_id: subject_id.into(),
            timestamps,
            readings,
            survey_weight,
            covariates: BTreeMap::new(),
        };
        series.validate()?;
        Ok(series)
    }

    /// Series sampled once per minute starting at minute zero.
    pub fn per_minute(subject_id: impl Into<String>, readings: Vec<f64>, survey_weight: f64) -> Result<Self> {
        let timestamps = (0..readings.len()).map(|j| j as f64).collect();
        Self::new(subject_id, timestamps, readings, survey_weight)
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: Covariate) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn covariate_number(&self, name: &str) -> Option<f64> {
        self.covariates.get(name).and_then(Covariate::as_number)
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.readings.is_empty() {
            return Err(Error::EmptySeries);
        }
        if self.readings.len() != self.timestamps.len() {
            return Err(Error::InvalidSeries(format!(
                "{} readings but {} timestamps",
                self.readings.len(),
                self.timestamps.len()
            )));
        }
        if let Some(r) = self.readings.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidSeries(format!("reading {r} is not a finite nonnegative value")));
        }
        if !(self.survey_weight > 0.0) || !self.survey_weight.is_finite() {
            return Err(Error::InvalidSeries(format!("survey weight {} must be positive", self.survey_weight)));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSeries("timestamps must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Optional lower and upper censoring cutoffs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CensorSpec {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl CensorSpec {
    pub const NONE: CensorSpec = CensorSpec { lower: None, upper: None };

    pub fn new(lower: Option<f64>, upper: Option<f64>) -> Result<Self> {
        let spec = Self { lower, upper };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lower {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::InvalidCensorBounds);
            }
        }
        if let Some(u) = self.upper {
            if !(u > 0.0) || u.is_nan() {
                return Err(Error::InvalidCensorBounds);
            }
        }
        if let (Some(l), Some(u)) = (self.lower, self.upper) {
            if l >= u {
                return Err(Error::InvalidCensorBounds);
            }
        }
        Ok(())
    }

    /// Location of the inactivity atom.
    pub fn atom(&self) -> f64 {
        self.lower.unwrap_or(0.0)
    }

    pub fn is_inactive(&self, reading: f64) -> bool {
        match self.lower {
            Some(l) => reading <= l,
            None => reading == 0.0,
        }
    }

    pub fn apply(&self, reading: f64) -> f64 {
        let r = match self.lower {
            Some(l) => reading.max(l),
            None => reading,
        };
        match self.upper {
            Some(u) => r.min(u),
            None => r,
        }
    }
}

/// Smoothed density of the active part, scaled to total mass `1 - p_inactive`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub abscissae: Vec<f64>,
    pub ordinates: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    /// Trapezoid-rule integral of the curve.
    pub fn mass(&self) -> f64 {
        self.abscissae
            .windows(2)
            .zip(self.ordinates.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

/// Where a density estimate is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalGrid {
    /// Uniform grid from the smallest active reading minus five bandwidths to
    /// the largest plus five, with at least `min_points` points and spacing no
    /// coarser than a quarter bandwidth (capped at 65 536 points).
    Auto { min_points: usize },
    Range { lo: f64, hi: f64, points: usize },
    Points(Vec<f64>),
}

impl Default for EvalGrid {
    fn default() -> Self {
        EvalGrid::Auto { min_points: 512 }
    }
}

impl EvalGrid {
    fn abscissae(&self, active: &[f64], h: f64) -> Result<Vec<f64>> {
        let (lo, hi, points) = match self {
            EvalGrid::Points(p) => {
                if p.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidArgument("evaluation points must be increasing".into()));
                }
                return Ok(p.clone());
            }
            EvalGrid::Range { lo, hi, points } => (*lo, *hi, *points),
            EvalGrid::Auto { min_points } => {
                let lo = active[0] - 5.0 * h;
                let hi = active[active.len() - 1] + 5.0 * h;
                let wanted = ((hi - lo) / (0.25 * h)).ceil() as usize + 1;
                (lo, hi, wanted.clamp((*min_points).max(2), 1 << 16))
            }
        };
        if points < 2 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!("bad evaluation range [{lo}, {hi}] with {points} points")));
        }
        let step = (hi - lo) / (points - 1) as f64;
        Ok((0..points).map(|k| lo + step * k as f64).collect())
    }
}

/// Mixed distribution: inactivity atom plus the full quantile function.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDistribution {
    pub p_inactive: f64,
    /// Atom location: zero, or the lower cutoff when one is set.
    pub atom: f64,
    pub quantiles: QuantileGrid,
    pub active_density: Option<DensityCurve>,
}

/// Fraction of readings that count as inactive under `censor`.
pub fn inactive_proportion(series: &ActivitySeries, censor: &CensorSpec) -> Result<f64> {
    if series.readings.is_empty() {
        return Err(Error::EmptySeries);
    }
    censor.validate()?;
    let inactive = series.readings.iter().filter(|r| censor.is_inactive(**r)).count();
    Ok(inactive as f64 / series.readings.len() as f64)
}

/// Clamps every reading into `[lower, upper]`, leaving everything else intact.
pub fn censor_series(series: &ActivitySeries, censor: &CensorSpec) -> Result<ActivitySeries> {
    censor.validate()?;
    let mut out = series.clone();
    for r in &mut out.readings {
        *r = censor.apply(*r);
    }
    Ok(out)
}

/// Empirical quantile function of the readings on the midpoint grid
/// `t_k = (k - 1/2) / m`, using the left-continuous inverse
/// `inf { x : F_n(x) >= t }`.
pub fn empirical_quantiles(series: &ActivitySeries, m: usize) -> Result<QuantileGrid> {
    quantiles_of(&series.readings, m)
}

/// Same as [`empirical_quantiles`] on a bare slice of values.
pub fn quantiles_of(values: &[f64], m: usize) -> Result<QuantileGrid> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    if m < 2 {
        return Err(Error::InvalidArgument(format!("grid size {m} must be at least 2")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as u128;
    let m2 = 2 * m as u128;
    // Smallest j with j/n >= (2k-1)/(2m), in exact integer arithmetic.
    let values = (1..=m as u128)
        .map(|k| {
            let j = (n * (2 * k - 1)).div_ceil(m2);
            sorted[(j - 1) as usize]
        })
        .collect();
    QuantileGrid::new(values)
}

/// Linear-interpolation sample quantile of sorted data (R type 7).
pub(crate) fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
///
/// When the interquartile range is zero but the sample is not constant the
/// standard deviation alone is used.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup_by(|a, b| a == b);
    if sorted.len() < 2 {
        return Err(Error::DegenerateActiveSample);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();

    let mut all = values.to_vec();
    all.sort_by(f64::total_cmp);
    let iqr = quantile_type7(&all, 0.75) - quantile_type7(&all, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian kernel density of the active readings, scaled by `1 - p_inactive`.
///
/// Without an explicit bandwidth, Silverman's rule is applied to the active
/// readings; a degenerate active sample falls back to [`FALLBACK_BANDWIDTH`].
pub fn kde_active(
    series: &ActivitySeries,
    censor: &CensorSpec,
    bandwidth: Option<f64>,
    eval: &EvalGrid,
) -> Result<DensityCurve> {
    let p_inactive = inactive_proportion(series, censor)?;
    let mut active: Vec<f64> = series
        .readings
        .iter()
        .filter(|r| !censor.is_inactive(**r))
        .map(|r| censor.apply(*r))
        .collect();
    if active.is_empty() {
        return Err(Error::AllInactive);
    }
    active.sort_by(f64::total_cmp);

    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidArgument(format!("bandwidth {h} must be positive"))),
        None => match silverman_bandwidth(&active) {
            Ok(h) => h,
            Err(_) => {
                log::warn!(
                    "subject {}: degenerate active sample, using bandwidth {FALLBACK_BANDWIDTH}",
                    series.subject_id
                );
                FALLBACK_BANDWIDTH
            }
        },
    };

    let abscissae = eval.abscissae(&active, h)?;
    let scale = (1.0 - p_inactive) / (active.len() as f64 * h);
    let ordinates = abscissae
        .iter()
        .map(|&x| {
            let from = active.partition_point(|v| *v < x - KERNEL_CUTOFF * h);
            let to = active.partition_point(|v| *v <= x + KERNEL_CUTOFF * h);
            let sum: f64 = active[from..to]
                .iter()
                .map(|v| {
                    let u = (v - x) / h;
                    INV_SQRT_2PI * (-0.5 * u * u).exp()
                })
                .sum();
            scale * sum
        })
        .collect();

    Ok(DensityCurve { abscissae, ordinates, bandwidth: h })
}

/// Builds the mixed representation: inactivity proportion, quantile grid of
/// the censored readings and, when requested, the active density.
///
/// A fully inactive series has no density even when one is requested.
pub fn build_mixed(
    series: &ActivitySeries,
    censor: &CensorSpec,
    m: usize,
    with_density: bool,
) -> Result<MixedDistribution> {
    series.validate()?;
    let p_inactive = inactive_proportion(series, censor)?;
    let censored = censor_series(series, censor)?;
    let quantiles = empirical_quantiles(&censored, m)?;
    let active_density = if with_density && p_inactive < 1.0 {
        Some(kde_active(series, censor, None, &EvalGrid::default())?)
    } else {
        None
    };
    Ok(MixedDistribution { p_inactive, atom: censor.atom(), quantiles, active_density })
}

/// Total activity count per day of monitoring.
///
/// The monitored span is `last - first + dt` minutes, where `dt` is the gap
/// between the first two timestamps.
pub fn tac_per_day(series: &ActivitySeries) -> Result<f64> {
    if series.timestamps.len() < 2 || series.readings.len() != series.timestamps.len() {
        return Err(Error::SpanUndefined);
    }
    let t = &series.timestamps;
    let dt = t[1] - t[0];
    let span = t[t.len() - 1] - t[0] + dt;
    if !(span > 0.0) {
        return Err(Error::SpanUndefined);
    }
    let total: f64 = series.readings.iter().sum();
    Ok(total / (span / 1440.0))
}
