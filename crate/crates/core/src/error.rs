use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DncbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DncbError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} did not converge within {iterations} iterations")]
    Convergence { what: &'static str, iterations: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("sampler method {method} unavailable: {reason}")]
    MethodUnavailable { method: &'static str, reason: String },

    #[error("numeric underflow: {0}")]
    Underflow(String),

    #[error("{path}:{row}:{col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("checkpoint checksum mismatch (expected {expected:08x}, found {found:08x})")]
    Checksum { expected: u32, found: u32 },

    #[error("incompatible checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DncbError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        DncbError::Domain(msg.into())
    }
}
