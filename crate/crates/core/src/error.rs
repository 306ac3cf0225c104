use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature ran out of panels. The best estimate is kept so
    /// callers can decide whether it is good enough.
    #[error("quadrature did not converge after {panels} panels (error {error:.3e} > target {target:.3e})")]
    Convergence {
        estimate: Vec<Complex64>,
        error: f64,
        target: f64,
        panels: usize,
    },

    #[error("tail truncation bound {bound:.3e} exceeds tolerance {tol:.3e} at eta = {eta_max}")]
    Truncation { bound: f64, tol: f64, eta_max: f64 },

    #[error("singular operator: {0}")]
    Singular(String),

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("expansion mismatch: {0}")]
    ExpansionMismatch(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("fit rejected: {0}")]
    Fit(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
