use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature on [{a}, {b}] did not converge: estimate {estimate:e}, error {error:e}")]
    Quadrature {
        a: f64,
        b: f64,
        estimate: f64,
        error: f64,
    },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("contraction factor gamma_{step} = {value} is not positive; decrease h")]
    NonPositiveGamma { step: usize, value: f64 },

    #[error("non-finite sampler state at step {step}, particle {particle}, coordinate {coordinate}")]
    NonFinite {
        step: usize,
        particle: usize,
        coordinate: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
