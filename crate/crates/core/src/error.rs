use thiserror::Error;

/// Errors raised by model construction and by the inference engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SjdeError {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("covariance is not symmetric (entry ({row},{col}) differs from its transpose)")]
    NonSymmetric { row: usize, col: usize },
    #[error("covariance is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("numerically singular precision matrix")]
    SingularPrecision,
    #[error("negative cost weight {name} = {value}")]
    NegativeWeight { name: String, value: f64 },
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("operation requires {expected} hypotheses, model has {got}")]
    HypothesisCount { expected: &'static str, got: usize },
    #[error("column {column} of the estimation weights carries no mass")]
    UnusedColumn { column: usize },
    #[error("data source exhausted after {t} samples")]
    DataExhausted { t: usize },
    #[error("grid has an empty axis ({axis})")]
    EmptyAxis { axis: usize },
    #[error("grid axis {axis} is not strictly increasing")]
    UnsortedAxis { axis: usize },
    #[error("grid file model hash mismatch (file {found}, expected {expected})")]
    ModelHashMismatch { found: String, expected: String },
    #[error("unsupported grid file: {0}")]
    GridFormat(String),
    #[error("target cost {alpha} is not reached within {t_max} samples")]
    TargetUnreachable { alpha: f64, t_max: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = SjdeError> = std::result::Result<T, E>;

impl From<std::io::Error> for SjdeError {
    fn from(err: std::io::Error) -> Self {
        SjdeError::Io(err.to_string())
    }
}
