use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("propensity must be positive, got {value} in record {record}")]
    NonPositivePropensity { value: f64, record: usize },

    #[error("no ground truth: problem has neither analytic means nor an evaluation dataset")]
    NoGroundTruth,

    #[error("infeasible caps in context {context}: capped mass sums to {sum} < 1")]
    InfeasibleCaps { context: usize, sum: f64 },

    #[error("instance too large to enumerate: {combinations} vertex combinations (limit {limit})")]
    TooLarge { combinations: u128, limit: u128 },

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("designer channel failed after {rounds_completed} rounds: {message}")]
    Channel {
        message: String,
        rounds_completed: usize,
    },

    #[error("unknown metric `{metric}`; known metrics: {known}")]
    UnknownMetric { metric: String, known: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
