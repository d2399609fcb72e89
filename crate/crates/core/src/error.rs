use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty series")]
    EmptySeries,
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("invalid censor bounds")]
    InvalidCensorBounds,
    #[error("degenerate active sample")]
    DegenerateActiveSample,
    #[error("all readings inactive")]
    AllInactive,
    #[error("span undefined")]
    SpanUndefined,
    #[error("grid mismatch: {left} vs {right} levels")]
    GridMismatch { left: usize, right: usize },
    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("variance undefined")]
    VarianceUndefined,
    #[error("degenerate predictor set")]
    DegeneratePredictors,
    #[error("zero variance response")]
    ZeroVarianceResponse,
    #[error("predictor kind does not match metric {0}")]
    PredictorKind(&'static str),
    #[error("empty neighborhood")]
    EmptyNeighborhood,
    #[error("singular kernel system; increase lambda")]
    SingularSystem,
    #[error("subject outside target population (age {0})")]
    OutsideTargetPopulation(f64),
    #[error("empty sample; increase n")]
    EmptySample,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
