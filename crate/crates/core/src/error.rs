use thiserror::Error;

/// Errors raised by the estimation, verification and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A probability level, length or other argument is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The kernel window does not contain enough distinct covariate values to
    /// identify the local fit.
    #[error("degenerate window at x = {x}: {reason}")]
    DegenerateWindow { x: f64, reason: String },

    /// The threshold curve could not be fitted at one of the grid points.
    #[error("threshold curve failed at grid point {index} (x = {x}): {source}")]
    CurvePoint {
        index: usize,
        x: f64,
        #[source]
        source: Box<Error>,
    },

    /// The (n-k)-th order statistic of the residuals is not positive.
    #[error(
        "non-positive tail threshold {threshold} with k = {k}, n = {n}; \
         raise tau_c or lower k"
    )]
    NonPositiveThreshold { threshold: f64, k: usize, n: usize },

    /// A fitted quantile that enters a logarithm is not positive.
    #[error("non-positive fitted quantile {value} at level {tau}")]
    NonPositiveQuantile { tau: f64, value: f64 },

    /// A tail prediction was requested below the intermediate level.
    #[error("level {tau} is below the intermediate level tau_c = {tau_c}")]
    BelowThresholdLevel { tau: f64, tau_c: f64 },

    /// The curve used to compute residuals returned a non-finite value.
    #[error("non-finite curve value at index {index} (x = {x})")]
    Evaluation { index: usize, x: f64 },

    /// Newton iterations did not converge without a ridge penalty.
    #[error("logistic fit did not converge after {iterations} iterations; separation suspected")]
    SeparationSuspected { iterations: usize },

    /// The reference score is zero, so the skill score is undefined.
    #[error("skill score undefined: reference score is zero")]
    UndefinedSkill,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_level(tau: f64, what: &str) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{what} must lie in (0, 1), got {tau}"
        )))
    }
}
