//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation was handed arguments that violate its
    /// preconditions (non-positive time constants, dimension mismatches, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A matrix that must be invertible (or positive definite) is singular
    /// to working precision.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// An integration produced a non-finite state; `time` is the first grid
    /// time at which the blow-up was observed.
    #[error("state became non-finite at t = {time}")]
    Blowup { time: f64 },

    /// Any other numeric failure (failed eigendecomposition, empty input to
    /// a reduction, ...).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Failed to parse an arithmetic expression in a system description.
    #[error("expression error: {0}")]
    Expression(String),
}

pub type Result<T> = std::result::Result<T, Error>;
