use thiserror::Error;

use crate::signed_graph::ModeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Scenario or argument inconsistency detected before any computation.
    #[error("config error: {0}")]
    Config(String),

    /// Schema violation while ingesting a scenario, with a JSON-pointer-like path.
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("certificate error for mode {mode}: {reason}")]
    Certificate { mode: ModeId, reason: String },

    /// The geometric tail of the ultimate bound diverges.
    #[error("unbounded certificate: {0}")]
    UnboundedCertificate(String),

    #[error("numerical failure in {context}: {reason}")]
    Numeric { context: String, reason: String },

    #[error("dimension {dim} exceeds the configured maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numeric(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
