//! Distributional representations of nonnegative activity time series and
//! survey-weighted nonparametric regression under the 2-Wasserstein geometry.
//!
//! The pipeline is:
//!
//! 1. [`distribution`] turns a subject's raw readings into a mixed distribution:
//!    an atom for inactive time plus the active part, stored as a quantile grid.
//! 2. [`geometry`] measures distances between quantile grids and computes
//!    Fréchet means, variances and pointwise spread curves.
//! 3. [`survey`] provides Horvitz–Thompson weighted statistics.
//! 4. [`regression`] fits survey-weighted Nadaraya–Watson smoothers and kernel
//!    ridge regressors over distributional or scalar predictors.
//! 5. [`evaluation`] wires these into leave-one-out R² comparisons, binary
//!    classification, risk groups and age strata.
//! 6. [`datagen`] simulates finite populations and unequal-probability samples
//!    with known ground truth.
//!
//! [`io`] holds the CSV and model file formats shared with the command line tool.

pub mod datagen;
pub mod distribution;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod regression;
pub mod survey;

pub use error::{Error, Result};

pub use distribution::{
    build_mixed, censor_series, empirical_quantiles, inactive_proportion, kde_active,
    silverman_bandwidth, tac_per_day, ActivitySeries, CensorSpec, Covariate, DensityCurve,
    EvalGrid, MixedDistribution,
};
pub use geometry::{
    frechet_mean, frechet_summary, frechet_variance, pointwise_sd_curve, wasserstein2,
    FrechetSummary, QuantileGrid,
};
pub use regression::{
    krr_fit, krr_loo, krr_predict, krr_select_lambda, laplacian_kernel, nw_loo, nw_predict,
    nw_select_bandwidth, KrrModel, Metric, NwConfig, NwKernel, Predictor, SurveySample,
};
pub use survey::{ht_mean, median_heuristic_sigma, weighted_median, weighted_r2, WeightedScalarSample};

/// Default number of probability levels on a quantile grid.
pub const DEFAULT_GRID_SIZE: usize = 500;
