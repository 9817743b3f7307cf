use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no path from node {from} to node {to}")]
    NoPath { from: u64, to: u64 },

    #[error("unknown node id {0}")]
    UnknownNode(u64),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty supply: wait function is singular at zero open vehicles")]
    EmptySupply,

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("problem too large: {size} exceeds limit {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("{path}:{line}: {msg}")]
    Load { path: PathBuf, line: u64, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Load { path: path.into(), line, msg: msg.into() }
    }
}
