use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Variants carry enough context for the CLI
/// to print a one-line diagnostic.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid exponent set: {0}")]
    InvalidExponents(String),
    #[error("invalid step function: {0}")]
    InvalidStepFunction(String),
    #[error("invalid atomic measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid population history: {0}")]
    InvalidHistory(String),
    #[error("parameter {0} lies outside [0, 1]")]
    OutsideUnitInterval(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("exponents must be consecutive 0..=d")]
    NotConsecutive,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("atom extraction failed: {0}")]
    AtomExtraction(String),
    #[error("tableau enumeration too large: {0}")]
    TableauTooLarge(String),
    #[error(
        "inverse transform requires a strictly positive step function (height {index} is {value})"
    )]
    NotStrictlyPositive { index: usize, value: f64 },
    #[error("point is not on the simplex (coordinate sum {0})")]
    NotOnSimplex(f64),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
