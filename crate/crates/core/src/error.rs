use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("atom number {n} exceeds the exact-mode cap {cap}")]
    TooManyAtoms { n: usize, cap: usize },
    #[error("state normalization {norm} deviates from 1 by more than {tol}")]
    NotNormalized { norm: f64, tol: f64 },
    #[error("operation requires exact mode: {0}")]
    RequiresExactMode(String),
    #[error("fit rejected: {0}")]
    FitRejected(String),
    #[error("no real root of the cubic in [-1, 1] (nearest real root {nearest})")]
    NoRootInRange { nearest: f64 },
    #[error("root bracketing failed: {0}")]
    Bracketing(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(invalid(alloc::format!("{name} must be finite, got {x}")))
    }
}
