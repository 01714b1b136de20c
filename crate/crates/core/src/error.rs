use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch at line {line}: expected {expected} fields, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("operation not supported for model class {class}: {op}")]
    Unsupported { class: &'static str, op: &'static str },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("matrix is singular or rank deficient: {0}")]
    Singular(String),
    #[error("line search failed at iteration {iter} (step fell below {floor:e})")]
    LineSearch { iter: usize, floor: f64 },
    #[error("non-finite objective or gradient at iteration {iter}")]
    NonFinite { iter: usize, theta: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
