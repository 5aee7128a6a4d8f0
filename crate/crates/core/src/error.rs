use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("index {index} out of range for {what} (len {len})")]
    Index { what: &'static str, index: usize, len: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("svd did not converge after {sweeps} sweeps (residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("unsupported operation: {0}")]
    Capability(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint length error: expected {expected} bytes, found {found}")]
    Length { expected: u64, found: u64 },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
