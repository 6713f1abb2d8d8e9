use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variant names are stable: the CLI prints them verbatim so scripts can
/// match on the error type.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("NotPositiveDefinite: pivot {pivot} at row {row} is below tolerance {tolerance:e}")]
    NotPositiveDefinite {
        row: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("DimensionMismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("InvalidDimension: dimension must be at least 1, got {0}")]
    InvalidDimension(usize),

    #[error("InvalidSchedule: {0}")]
    InvalidSchedule(String),

    #[error("OracleDimensionMismatch: oracle has dimension {oracle}, initial point has {x0}")]
    OracleDimensionMismatch { oracle: usize, x0: usize },

    #[error("NonFiniteIterate: iterate became non-finite at t = {t}")]
    NonFiniteIterate { t: usize },

    #[error("InvalidBatchCount: need at least 2 batches, got {0}")]
    InvalidBatchCount(usize),

    #[error("BatchTooSmall: cannot split {t} iterations into {m} nonempty batches")]
    BatchTooSmall { t: usize, m: usize },

    #[error("InvalidAllocation: {0}")]
    InvalidAllocation(String),

    #[error("FeedCountMismatch: plan expects {expected} iterates, received {got}")]
    FeedCountMismatch { expected: usize, got: usize },

    #[error("BatchCountTooSmall: joint inference needs m > d, got m = {m}, d = {d}")]
    BatchCountTooSmall { m: usize, d: usize },

    #[error("DegenerateCovariance: batch-means covariance is not positive definite")]
    DegenerateCovariance,

    #[error("DegenerateDraw: limiting shape matrix was singular twice in a row")]
    DegenerateDraw,

    #[error("KeyMismatch: scaling quantile calibrated for {calibrated}, summary needs {required}")]
    KeyMismatch {
        calibrated: String,
        required: String,
    },

    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),

    #[error("ParseError: {0}")]
    ParseError(String),

    #[error("LabelDomainError: row {row} has label {label}, expected -1 or 1")]
    LabelDomainError { row: usize, label: f64 },

    #[error("ExhaustedData: run requested row {requested} but the data set has {available} rows")]
    ExhaustedData { requested: usize, available: usize },

    #[error(
        "TooManyDegenerate: {degenerate} of {replications} replications had degenerate covariance"
    )]
    TooManyDegenerate {
        degenerate: usize,
        replications: usize,
    },

    #[error("Io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
