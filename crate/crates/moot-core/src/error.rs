//! Shared error type for the engine.
//!
//! Every fallible operation returns [`Error`]; variants are grouped by the
//! kind of contract that was broken rather than by module, so callers can
//! match on what went wrong without knowing which layer raised it.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or structural precondition on an input was violated.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Two values that must share an outcome space (or a dimension) do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was asked of an outcome-space kind that does not support it.
    #[error("unsupported space kind: {0}")]
    Kind(String),

    /// A divergence was evaluated outside its domain (e.g. KL with q=0 < p).
    #[error("domain error: {0}")]
    Domain(String),

    /// Judge score aggregation found incomplete coverage.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// An agent or judge backend failed; the round that observed it was not
    /// applied, so the debate can be resumed after the backend recovers.
    #[error("backend '{backend}' failed: {reason}")]
    Backend { backend: String, reason: String },

    /// A configuration file or fixture failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A recorded transcript or replay fixture is internally inconsistent.
    #[error("replay error: {0}")]
    Replay(String),

    /// The scheduler's budget ledger would go negative; the conservative
    /// cost-estimator contract was breached upstream.
    #[error("budget violation: {0}")]
    Budget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
