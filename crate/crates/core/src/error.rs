use thiserror::Error;

/// Errors raised by the numeric and modeling routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("length mismatch in {context}: expected {expected}, got {got}")]
    LengthMismatch { context: &'static str, expected: usize, got: usize },

    #[error("non-finite loss {value} at probe point of coordinate {coordinate}")]
    NonFiniteProbe { coordinate: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sample too small for {estimator} estimator: need {needed}, got {got}")]
    SampleTooSmall { estimator: &'static str, needed: usize, got: usize },

    /// Binning collapsed to fewer than two bins, so an independence penalty
    /// over it would be vacuous.
    #[error("degenerate binning: {0}")]
    DegenerateBins(String),

    #[error("unknown category {0} and no overflow bin")]
    UnknownCategory(f64),

    #[error("invalid `{field}`: {message}")]
    InvalidField { field: &'static str, message: String },

    /// Training produced a non-finite objective or gradient.
    #[error("training diverged at step {step}; last good step: {last_good}")]
    Diverged { step: usize, last_good: String },

    #[error("evaluation stratum `{0}` is empty")]
    StratumMissing(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
