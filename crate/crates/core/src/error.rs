use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite even with jitter {jitter:.1e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("triangular matrix is singular at diagonal index {index}")]
    SingularTriangular { index: usize },

    #[error("tensor quadrature supports at most 3 dimensions, got {0}")]
    DimensionTooLarge(usize),

    #[error("observation {observed} exceeds the task maximum {task_max}")]
    InconsistentMax { observed: f64, task_max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
