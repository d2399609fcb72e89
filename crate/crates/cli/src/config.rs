use std::path::{Path, PathBuf};

use actdist::datagen::{DesignSpec, IntensityLaw, PopulationSpec, ResponseModel, StratumSpec};
use actdist::evaluation::default_lambda_grid;
use actdist::NwKernel;
use serde::{Deserialize, Serialize};

use crate::Invalid;

/// Everything a run needs. Loaded from a TOML file, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub subjects: Option<PathBuf>,
    /// Summary CSV for `regress`; defaults to `summary.csv` next to the input.
    pub summary: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub m: usize,
    pub censor_lower: Option<f64>,
    pub censor_upper: Option<f64>,
    pub threshold: f64,
    pub seed: u64,
    /// Response columns for `regress`.
    pub responses: Vec<String>,
    /// Binary outcome column for `classify`.
    pub outcome: String,
    pub lambda_grid: Vec<f64>,
    /// Center each response at its survey-weighted mean before `regress`
    /// fits; the kernel ridge model has no intercept.
    pub center: bool,
    /// Fixed smoother bandwidth; selected by leave-one-out error when unset.
    pub bandwidth: Option<f64>,
    /// Candidate bandwidths; pairwise-distance quantiles when unset.
    pub bandwidth_grid: Option<Vec<f64>>,
    pub kernel: KernelName,
    pub population: SimulationConfig,
    /// Sampling design for `simulate`; a census when unset.
    pub design: Option<DesignSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            subjects: None,
            summary: None,
            model: None,
            out: None,
            m: actdist::DEFAULT_GRID_SIZE,
            censor_lower: None,
            censor_upper: None,
            threshold: 0.5,
            seed: 1,
            responses: Vec::new(),
            outcome: "mortality".into(),
            lambda_grid: default_lambda_grid(),
            center: true,
            bandwidth: None,
            bandwidth_grid: None,
            kernel: KernelName::Gaussian,
            population: SimulationConfig::default(),
            design: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Gaussian,
    Epanechnikov,
}

impl From<KernelName> for NwKernel {
    fn from(k: KernelName) -> Self {
        match k {
            KernelName::Gaussian => NwKernel::Gaussian,
            KernelName::Epanechnikov => NwKernel::Epanechnikov,
        }
    }
}

/// Population description for `simulate`; the run seed drives all randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub size: usize,
    pub minutes: usize,
    /// Write every population subject's readings, not only the sample's.
    #[serde(default = "yes")]
    pub write_readings: bool,
    pub strata: Vec<StratumSpec>,
    #[serde(default)]
    pub responses: Vec<ResponseModel>,
}

fn yes() -> bool {
    true
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let stratum = |proportion, inactivity, mean: [f64; 2], mortality| StratumSpec {
            proportion,
            inactivity,
            intensity: IntensityLaw::LogNormalMean { mean, log_sd: [0.4, 1.2] },
            age: [68, 85],
            mortality,
            response_shift: 0.0,
        };
        Self {
            size: 300,
            minutes: 1440,
            write_readings: true,
            strata: vec![
                stratum(0.4, [0.5, 0.7], [300.0, 600.0], 0.05),
                stratum(0.35, [0.6, 0.8], [200.0, 400.0], 0.15),
                stratum(0.25, [0.75, 0.95], [100.0, 250.0], 0.4),
            ],
            responses: vec![ResponseModel {
                name: "score".into(),
                intercept: 10.0,
                spread: 5.0,
                noise_sd: 0.5,
                ..ResponseModel::default()
            }],
        }
    }
}

impl SimulationConfig {
    pub fn to_spec(&self, seed: u64) -> PopulationSpec {
        PopulationSpec {
            size: self.size,
            seed,
            minutes: self.minutes,
            strata: self.strata.clone(),
            responses: self.responses.clone(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(format!("cannot read config {}", path.display())))?;
        toml::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())).into())
    }

    /// The configuration as TOML, preceded by comments describing unset keys.
    pub fn to_toml(&self) -> String {
        let mut head = String::new();
        let mut unset = |set: bool, line: &str| {
            if !set {
                head.push_str("# ");
                head.push_str(line);
                head.push('\n');
            }
        };
        unset(self.input.is_some(), "input: readings CSV (build-dist) or quantiles CSV (regress, classify, predict)");
        unset(self.subjects.is_some(), "subjects: subjects CSV with survey_weight and covariates");
        unset(self.summary.is_some(), "summary: defaults to summary.csv next to input");
        unset(self.model.is_some(), "model: model JSON for predict");
        unset(self.out.is_some(), "out: output directory");
        unset(self.censor_lower.is_some(), "censor_lower: no lower censoring; inactive means a zero reading");
        unset(self.censor_upper.is_some(), "censor_upper: no upper censoring");
        unset(self.bandwidth.is_some(), "bandwidth: chosen from bandwidth_grid by leave-one-out error");
        unset(self.bandwidth_grid.is_some(), "bandwidth_grid: pairwise-distance quantiles at 0.05, 0.15, ..., 0.95");
        unset(
            self.design.is_some(),
            "design: census; or e.g. [design] kind = \"stratified\", fractions = [0.1, 0.3, 0.6]",
        );
        if !head.is_empty() {
            head.push('\n');
        }
        head + &toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        if self.m < 2 {
            return Err(Invalid(format!("m = {} must be at least 2", self.m)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Invalid(format!("threshold {} must lie in [0, 1]", self.threshold)));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Invalid(format!("bandwidth {h} must be positive")));
            }
        }
        Ok(())
    }
}
