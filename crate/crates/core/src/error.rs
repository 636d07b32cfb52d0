//! Crate-wide error type.

use thiserror::Error;

/// Errors produced while constructing, updating, or evaluating predictive
/// rules and the experiments built on top of them.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad parameters, unnormalized measures, space
    /// mismatches, or malformed plans.
    #[error("configuration: {0}")]
    Config(String),

    /// The operation is not defined for this space or measure kind, for
    /// example a distribution-function evaluation on a categorical space.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// An argument is outside the domain of the operation (empty partition,
    /// zero-length accumulator, level outside (0, 1), ...).
    #[error("domain: {0}")]
    Domain(String),

    /// Conditioning on an event the current state assigns probability zero.
    #[error("conditioning on a null event: {0}")]
    NullConditioning(String),

    /// A numeric computation failed: non-finite intermediate values or a
    /// matrix operation that cannot be completed.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by caller-supplied configuration rather than
    /// failures arising during a computation. Front ends use this to pick
    /// exit codes.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Unsupported(_) | Error::Domain(_)
        )
    }
}
