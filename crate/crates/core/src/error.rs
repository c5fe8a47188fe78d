use thiserror::Error;

/// Which part of the probability-simplex contract a vector broke.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexViolation {
    #[error("dimension must be at least 2, got {0}")]
    TooFewOutcomes(usize),
    #[error("expected {expected} entries, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("entry {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("entries sum to {sum}, not 1")]
    SumNotOne { sum: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a probability distribution: {0}")]
    NotOnSimplex(#[from] SimplexViolation),

    #[error("{generator}: entry {index} = {value} is outside the generator domain")]
    Domain {
        generator: &'static str,
        index: usize,
        value: f64,
    },

    #[error("dual coordinate {index} is not finite ({value})")]
    NonFiniteDual { index: usize, value: f64 },

    #[error("power exponent beta must lie in (1, 2], got {0}")]
    InvalidBeta(f64),

    #[error("amplification alpha must be >= 1, got {0}")]
    InvalidAlpha(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("outcome {index} out of range for dimension {dim}")]
    OutcomeOutOfRange { index: usize, dim: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("internal numerical failure: {0}")]
    Internal(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot parse rule spec {spec:?}: {reason}")]
    RuleSpec { spec: String, reason: String },

    #[error("forecaster {name}: {reason}")]
    Forecaster { name: String, reason: String },

    #[error("trace exhausted after {steps} recorded steps")]
    TraceExhausted { steps: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("forecaster did not answer within {0:?}")]
    Timeout(std::time::Duration),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
