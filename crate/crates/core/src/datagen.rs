//! Synthetic finite populations with known ground truth, and unequal
//! probability samples drawn from them.
//!
//! Every subject gets its own random streams derived from `(seed, index)`,
//! so populations are identical regardless of how many threads build them.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{ActivitySeries, Covariate};
use crate::{Error, Result};

/// Family of the positive activity intensities. Parameters are drawn per
/// subject, uniformly within each `[lo, hi]` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum IntensityLaw {
    /// `exp(N(mu, s^2))` with `mu` in `log_mean` and `s` in `log_sd`.
    LogNormal { log_mean: [f64; 2], log_sd: [f64; 2] },
    /// Log-normal parameterized by its mean, so the mean and the log-scale
    /// spread vary independently.
    LogNormalMean { mean: [f64; 2], log_sd: [f64; 2] },
    Gamma { shape: [f64; 2], scale: [f64; 2] },
}

/// Concrete per-subject intensity distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActiveLaw {
    LogNormal { mu: f64, sigma: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl ActiveLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            ActiveLaw::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            ActiveLaw::Gamma { shape, scale } => shape * scale,
        }
    }

    /// Shape of the law independent of its scale: the log-scale standard
    /// deviation for log-normal, the coefficient of variation for Gamma.
    pub fn spread(&self) -> f64 {
        match *self {
            ActiveLaw::LogNormal { sigma, .. } => sigma,
            ActiveLaw::Gamma { shape, .. } => 1.0 / shape.sqrt(),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ActiveLaw::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
            ActiveLaw::Gamma { shape, scale } => Gamma::new(shape, scale).expect("validated").sample(rng),
        }
    }
}

/// Linear response in a subject's latent features plus Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseModel {
    pub name: String,
    pub intercept: f64,
    pub p_inactive: f64,
    pub active_mean: f64,
    pub spread: f64,
    /// Coefficient on the expected total activity count per day.
    pub tac: f64,
    pub age: f64,
    pub noise_sd: f64,
}

impl Default for ResponseModel {
    fn default() -> Self {
        Self {
            name: "y".into(),
            intercept: 0.0,
            p_inactive: 0.0,
            active_mean: 0.0,
            spread: 0.0,
            tac: 0.0,
            age: 0.0,
            noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub proportion: f64,
    /// Range of per-subject inactivity rates.
    pub inactivity: [f64; 2],
    pub intensity: IntensityLaw,
    /// Integer ages, inclusive.
    #[serde(default = "default_age")]
    pub age: [u32; 2],
    /// Probability of the binary `mortality` outcome.
    #[serde(default)]
    pub mortality: f64,
    /// Added to every continuous response in this stratum.
    #[serde(default)]
    pub response_shift: f64,
}

fn default_age() -> [u32; 2] {
    [68, 85]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub size: usize,
    pub seed: u64,
    /// Readings per subject, one per minute.
    #[serde(default = "default_minutes")]
    pub minutes: usize,
    pub strata: Vec<StratumSpec>,
    #[serde(default)]
    pub responses: Vec<ResponseModel>,
}

fn default_minutes() -> usize {
    1440
}

fn check_range(name: &str, r: [f64; 2], positive: bool) -> Result<()> {
    let ok = r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && (!positive || r[0] > 0.0);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name} range {r:?} is invalid")))
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidSpec("population size must be at least 1".into()));
        }
        if self.minutes < 2 {
            return Err(Error::InvalidSpec("at least two minutes per subject are needed".into()));
        }
        if self.strata.is_empty() {
            return Err(Error::InvalidSpec("no strata".into()));
        }
        let total: f64 = self.strata.iter().map(|s| s.proportion).sum();
        if (total - 1.0).abs() > 1e-9 || self.strata.iter().any(|s| !(s.proportion >= 0.0)) {
            return Err(Error::InvalidSpec(format!("stratum proportions sum to {total}, not 1")));
        }
        for s in &self.strata {
            check_range("inactivity", s.inactivity, false)?;
            if s.inactivity[0] < 0.0 || s.inactivity[1] > 1.0 {
                return Err(Error::InvalidSpec("inactivity rates must lie in [0, 1]".into()));
            }
            if s.age[0] > s.age[1] {
                return Err(Error::InvalidSpec(format!("age range {:?} is invalid", s.age)));
            }
            if !(0.0..=1.0).contains(&s.mortality) {
                return Err(Error::InvalidSpec("mortality must lie in [0, 1]".into()));
            }
            match &s.intensity {
                IntensityLaw::LogNormal { log_mean, log_sd } => {
                    check_range("log_mean", *log_mean, false)?;
                    check_range("log_sd", *log_sd, true)?;
                }
                IntensityLaw::LogNormalMean { mean, log_sd } => {
                    check_range("mean", *mean, true)?;
                    check_range("log_sd", *log_sd, true)?;
                }
                IntensityLaw::Gamma { shape, scale } => {
                    check_range("shape", *shape, true)?;
                    check_range("scale", *scale, true)?;
                }
            }
        }
        let mut names: Vec<&str> = self.responses.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| RESERVED.contains(n)) {
            return Err(Error::InvalidSpec("response names must be unique and not reserved".into()));
        }
        if self.responses.iter().any(|r| !(r.noise_sd >= 0.0)) {
            return Err(Error::InvalidSpec("noise_sd must be nonnegative".into()));
        }
        Ok(())
    }

    /// Stratum sizes by largest remainder; ties go to the earlier stratum.
    pub fn stratum_sizes(&self) -> Vec<usize> {
        let exact: Vec<f64> = self.strata.iter().map(|s| s.proportion * self.size as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut left = self.size.saturating_sub(sizes.iter().sum());
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|a, b| (exact[*b] - exact[*b].floor()).total_cmp(&(exact[*a] - exact[*a].floor())).then(a.cmp(b)));
        for k in order.into_iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[k] += 1;
            left -= 1;
        }
        sizes
    }
}

const RESERVED: [&str; 5] = ["age", "mortality", "p_inactive", "active_mean", "spread"];

/// A simulated subject: latent parameters and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub stratum: usize,
    pub p_inactive: f64,
    pub law: ActiveLaw,
    /// Numeric covariates: `age`, `mortality`, the latent features and every response.
    pub covariates: BTreeMap<String, f64>,
    readings_seed: u64,
}

impl Subject {
    /// Expected total activity count per day.
    pub fn expected_tac(&self) -> f64 {
        (1.0 - self.p_inactive) * self.law.mean() * 1440.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub spec: PopulationSpec,
    pub subjects: Vec<Subject>,
    /// Finite-population mean of every numeric covariate.
    pub means: BTreeMap<String, f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index) ^ stream)
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn make_subject(spec: &PopulationSpec, index: usize, stratum: usize) -> Subject {
    let s = &spec.strata[stratum];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64, 0));
    let p_inactive = uniform(&mut rng, s.inactivity);
    let law = match &s.intensity {
        IntensityLaw::LogNormal { log_mean, log_sd } => {
            ActiveLaw::LogNormal { mu: uniform(&mut rng, *log_mean), sigma: uniform(&mut rng, *log_sd) }
        }
        IntensityLaw::LogNormalMean { mean, log_sd } => {
            let m = uniform(&mut rng, *mean);
            let sigma = uniform(&mut rng, *log_sd);
            ActiveLaw::LogNormal { mu: m.ln() - 0.5 * sigma * sigma, sigma }
        }
        IntensityLaw::Gamma { shape, scale } => {
            ActiveLaw::Gamma { shape: uniform(&mut rng, *shape), scale: uniform(&mut rng, *scale) }
        }
    };
    let age = rng.random_range(s.age[0]..=s.age[1]) as f64;
    let mortality = if rng.random::<f64>() < s.mortality { 1.0 } else { 0.0 };
    let tac = (1.0 - p_inactive) * law.mean() * 1440.0;

    let mut covariates = BTreeMap::new();
    covariates.insert("age".to_string(), age);
    covariates.insert("mortality".to_string(), mortality);
    covariates.insert("p_inactive".to_string(), p_inactive);
    covariates.insert("active_mean".to_string(), law.mean());
    covariates.insert("spread".to_string(), law.spread());
    for r in &spec.responses {
        let noise: f64 = rng.sample(StandardNormal);
        let y = r.intercept
            + r.p_inactive * p_inactive
            + r.active_mean * law.mean()
            + r.spread * law.spread()
            + r.tac * tac
            + r.age * age
            + s.response_shift
            + r.noise_sd * noise;
        covariates.insert(r.name.clone(), y);
    }
    Subject {
        id: format!("S{:06}", index + 1),
        stratum,
        p_inactive,
        law,
        covariates,
        readings_seed: derive_seed(spec.seed, index as u64, 1),
    }
}

/// Builds the population's subjects and their covariates. Readings are
/// generated on demand by [`Population::series`].
pub fn simulate_population(spec: &PopulationSpec) -> Result<Population> {
    spec.validate()?;
    let sizes = spec.stratum_sizes();
    let strata: Vec<usize> = sizes.iter().enumerate().flat_map(|(h, n)| std::iter::repeat_n(h, *n)).collect();
    let subjects: Vec<Subject> =
        strata.par_iter().enumerate().map(|(i, h)| make_subject(spec, i, *h)).collect();
    let mut means = BTreeMap::new();
    for name in subjects[0].covariates.keys() {
        let total: f64 = subjects.iter().map(|s| s.covariates[name]).sum();
        means.insert(name.clone(), total / subjects.len() as f64);
    }
    let tac_total: f64 = subjects.iter().map(Subject::expected_tac).sum();
    means.insert("expected_tac".into(), tac_total / subjects.len() as f64);
    Ok(Population { spec: spec.clone(), subjects, means })
}

impl Population {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn stratum_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.spec.strata.len()];
        for s in &self.subjects {
            sizes[s.stratum] += 1;
        }
        sizes
    }

    /// Minute-by-minute readings of subject `index`: i.i.d. zero with the
    /// subject's inactivity rate, otherwise a draw from its intensity law.
    pub fn series(&self, index: usize, survey_weight: f64) -> Result<ActivitySeries> {
        let subject = &self.subjects[index];
        let mut rng = ChaCha8Rng::seed_from_u64(subject.readings_seed);
        let readings = (0..self.spec.minutes)
            .map(|_| if rng.random::<f64>() < subject.p_inactive { 0.0 } else { subject.law.draw(&mut rng) })
            .collect();
        let mut series = ActivitySeries::per_minute(subject.id.clone(), readings, survey_weight)?;
        for (k, v) in &subject.covariates {
            series.covariates.insert(k.clone(), Covariate::Number(*v));
        }
        series.covariates.insert("stratum".into(), Covariate::Label(format!("{}", subject.stratum + 1)));
        Ok(series)
    }

    /// All series with unit weight.
    pub fn materialize(&self) -> Result<Vec<ActivitySeries>> {
        (0..self.len()).into_par_iter().map(|i| self.series(i, 1.0)).collect()
    }
}

/// How units enter the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Simple random sampling without replacement inside each stratum, taking
    /// `round(fraction * N_h)` units (at least one when the fraction is positive).
    Stratified { fractions: Vec<f64> },
    /// Independent Bernoulli selection with a per-stratum probability.
    Poisson { probabilities: Vec<f64> },
    /// Independent Bernoulli selection with probability proportional to a
    /// positive covariate, capped at one, for an expected size `n`.
    SizeProportional { n: f64, size: String },
}

impl DesignSpec {
    /// Every unit included with certainty.
    pub fn census(strata: usize) -> Self {
        DesignSpec::Stratified { fractions: vec![1.0; strata] }
    }

    /// Inclusion probability of every population unit.
    pub fn inclusion_probabilities(&self, population: &Population) -> Result<Vec<f64>> {
        let strata = population.spec.strata.len();
        let per_stratum = |v: &[f64], what: &str| -> Result<()> {
            if v.len() != strata {
                return Err(Error::InvalidSpec(format!("{} {what} for {strata} strata", v.len())));
            }
            if v.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
                return Err(Error::InvalidSpec(format!("{what} must lie in (0, 1]")));
            }
            Ok(())
        };
        match self {
            DesignSpec::Stratified { fractions } => {
                per_stratum(fractions, "fractions")?;
                let sizes = population.stratum_sizes();
                let pis: Vec<f64> = sizes
                    .iter()
                    .zip(fractions)
                    .map(|(n_h, f)| if *n_h == 0 { 1.0 } else { stratum_take(*n_h, *f) as f64 / *n_h as f64 })
                    .collect();
                Ok(population.subjects.iter().map(|s| pis[s.stratum]).collect())
            }
            DesignSpec::Poisson { probabilities } => {
                per_stratum(probabilities, "probabilities")?;
                Ok(population.subjects.iter().map(|s| probabilities[s.stratum]).collect())
            }
            DesignSpec::SizeProportional { n, size } => {
                let x: Vec<f64> = population
                    .subjects
                    .iter()
                    .map(|s| match size.as_str() {
                        "expected_tac" => Some(s.expected_tac()),
                        other => s.covariates.get(other).copied(),
                    })
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::InvalidSpec(format!("unknown size covariate {size}")))?;
                if x.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidSpec("size covariate must be positive".into()));
                }
                if !(*n > 0.0) || *n > population.len() as f64 {
                    return Err(Error::InvalidSpec(format!("expected sample size {n} is out of range")));
                }
                let total: f64 = x.iter().sum();
                Ok(x.iter().map(|v| (n * v / total).min(1.0)).collect())
            }
        }
    }
}

fn stratum_take(n_h: usize, fraction: f64) -> usize {
    ((fraction * n_h as f64).round() as usize).clamp(1, n_h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledUnit {
    /// Position in the population.
    pub index: usize,
    pub pi: f64,
    /// Exactly `1 / pi`.
    pub weight: f64,
}

/// Units selected by one realization of a design, in population order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub units: Vec<SampledUnit>,
}

impl SampleDraw {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.weight).collect()
    }

    /// Values of a numeric covariate for the sampled units.
    pub fn covariate(&self, population: &Population, name: &str) -> Option<Vec<f64>> {
        self.units.iter().map(|u| population.subjects[u.index].covariates.get(name).copied()).collect()
    }

    /// Readings of the sampled units, weighted by `1 / pi`.
    pub fn series(&self, population: &Population) -> Result<Vec<ActivitySeries>> {
        self.units.par_iter().map(|u| population.series(u.index, u.weight)).collect()
    }
}

pub fn draw_sample(population: &Population, design: &DesignSpec, seed: u64) -> Result<SampleDraw> {
    let pis = design.inclusion_probabilities(population)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5A17_D00D));
    let mut selected = vec![false; population.len()];
    match design {
        DesignSpec::Stratified { fractions } => {
            let mut members: Vec<Vec<usize>> = vec![vec![]; population.spec.strata.len()];
            for (i, s) in population.subjects.iter().enumerate() {
                members[s.stratum].push(i);
            }
            for (h, idx) in members.iter().enumerate() {
                if idx.is_empty() {
                    continue;
                }
                let take = stratum_take(idx.len(), fractions[h]);
                for k in sample_indices(&mut rng, idx.len(), take) {
                    selected[idx[k]] = true;
                }
            }
        }
        DesignSpec::Poisson { .. } | DesignSpec::SizeProportional { .. } => {
            for (sel, pi) in selected.iter_mut().zip(&pis) {
                *sel = *pi >= 1.0 || rng.random::<f64>() < *pi;
            }
        }
    }
    let units: Vec<SampledUnit> = selected
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(index, _)| SampledUnit { index, pi: pis[index], weight: 1.0 / pis[index] })
        .collect();
    if units.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(SampleDraw { units })
}
