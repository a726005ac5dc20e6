use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("speculator is not faster than the target tool (alpha = {alpha}); set the override flag to allow it")]
    SlowSpeculator { alpha: f64 },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("window cap of {cap} threads reached while hop {hop} is still waiting to be speculated")]
    WindowCapExceeded { cap: usize, hop: usize },

    #[error("live executor would exceed its worker cap of {cap}")]
    WorkerCapExceeded { cap: usize },

    #[error("{path}:{line}: {reason}")]
    Trace {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("trace query `{query_id}`: {reason}")]
    TraceQuery { query_id: String, reason: String },

    #[error("empty trace")]
    EmptyTrace,

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
