//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by configuration validation and numerical evaluation.
#[derive(Debug, Error)]
pub enum Error {
    /// Input vector/matrix dimensions do not match what the operation expects.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A parameter failed validation; `name` identifies the offending field.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// An integrand, path map, or quadrature node produced a non-finite value.
    #[error("non-finite evaluation in {context} at argument {at}")]
    NonFinite { context: &'static str, at: f64 },

    /// An estimator encountered a non-finite sample.
    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: u64 },

    /// Work-model parameters lie outside the validity domain of the
    /// closed-form exponents.
    #[error("work-model domain violated: {0}")]
    Domain(String),
}

impl Error {
    /// Convenience constructor for parameter errors.
    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
