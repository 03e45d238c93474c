//! Crate error type.

use thiserror::Error;

/// Errors surfaced by model construction, estimation, detection, and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (dimension mismatch, empty
    /// subset, invalid probability, malformed config, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// A numerical routine failed to produce a usable result (factorization
    /// failure, fixed-point iteration that did not converge, singular
    /// normalizer, non-finite values).
    #[error("computation: {0}")]
    Computation(String),

    /// Filesystem or serialization failure while reading or writing
    /// configs, tables, or reports.
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(format!("csv: {e}"))
    }
}
