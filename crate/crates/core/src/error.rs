//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample list")]
    EmptySamples,

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("weights sum to {sum}, which is not positive")]
    ZeroMass { sum: f64 },

    #[error("non-finite coordinate in {what}")]
    NonFinite { what: &'static str },

    #[error("atom {index} lies outside the control box")]
    AtomOutsideBox { index: usize },

    #[error("support size {got} exceeds the exact-transport cap {cap}; subsample first")]
    SupportCap { cap: usize, got: usize },

    #[error("operation requires one-dimensional measures, got dimension {got}")]
    NotOneDimensional { got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside the valid range [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("coefficient `{coefficient}` returned a non-finite value at t={t}{context}")]
    CoefficientNaN {
        coefficient: &'static str,
        t: f64,
        context: String,
    },

    #[error("simulation failed at step {step}, particle {particle}: {reason}")]
    SimulationFailure {
        step: usize,
        particle: usize,
        reason: String,
    },

    #[error("transport solver did not converge within {0} pivots")]
    TransportNoConvergence(usize),

    #[error("all sampled pairs were degenerate (zero denominator)")]
    AllPairsDegenerate,

    #[error("all candidates in generation {generation} had non-finite cost")]
    AllCandidatesNonFinite { generation: usize },

    #[error("model expression error: {0}")]
    Expression(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
