use thiserror::Error;

#[derive(Debug, Error)]
pub enum QkinError {
    #[error("wavevector {k:?} lies outside the truncation box of half-width {half_width}")]
    Domain { k: Vec<f64>, half_width: f64 },

    #[error("group velocity of the acoustic branch is singular at k = 0")]
    SingularGradient,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("energy shell at E = {energy} with eta = {eta} is empty")]
    EmptyShell { energy: f64, eta: f64 },

    #[error("degenerate energy shell at E = {energy}: {reason}")]
    DegenerateShell { energy: f64, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("permanent of a {0}x{0} matrix exceeds the size cap of 12")]
    PermanentTooLarge(usize),

    #[error("chemical potential {mu} is not below the band minimum {band_min} (condensation)")]
    Condensation { mu: f64, band_min: f64 },

    #[error("spectrum is negative ({value}) at difference vector {q:?}")]
    InvalidSpectrum { q: Vec<f64>, value: f64 },

    #[error("step size fell below dt_min = {dt_min} at t = {t}: {reason}")]
    StepUnderflow {
        t: f64,
        dt_min: f64,
        reason: String,
        snapshot: Box<Vec<f64>>,
    },

    #[error("estimated cost {estimate:.3e} exceeds the budget {budget:.3e}")]
    BudgetExceeded { estimate: f64, budget: f64 },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QkinError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(QkinError::LengthMismatch { expected, got });
    }
    Ok(())
}
