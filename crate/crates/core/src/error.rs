use thiserror::Error;

use num_complex::Complex64;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("theorem hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("{what} did not converge after {iterations} iterations")]
    Convergence {
        what: &'static str,
        iterations: usize,
        /// Eigenvalues deflated before the iteration cap was hit.
        partial: Vec<Complex64>,
    },

    #[error("divergence at step {index} (t = {time})")]
    Divergence { index: usize, time: f64 },

    #[error("time {t} outside covered range [0, {horizon}]")]
    Range { t: f64, horizon: f64 },

    #[error("missing capability: {0}")]
    Capability(&'static str),

    #[error("numeric consistency check failed: {0}")]
    NumericConsistency(String),

    #[error("slope fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {value}")))
    }
}
