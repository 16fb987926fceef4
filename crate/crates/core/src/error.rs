use std::path::PathBuf;

/// Errors raised anywhere in the modelling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("optimizer did not converge after {evaluations} evaluations")]
    NoConvergence { evaluations: usize },
    #[error("hessian at the mode is not negative definite")]
    IndefiniteHessian,
    #[error("hyperparameter grid exceeds cap of {cap} points")]
    GridTooLarge { cap: usize },
    #[error("conditioning failed for grid point {index}: {source}")]
    Condition {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{failed} of {total} replicates failed (more than 5%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::InvalidInput(_) => "invalid_input",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoConvergence { .. } => "no_convergence",
            Error::IndefiniteHessian => "indefinite_hessian",
            Error::GridTooLarge { .. } => "grid_too_large",
            Error::Condition { .. } => "condition",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
