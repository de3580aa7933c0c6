use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("control component {index} = {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("non-finite value produced at substep {substep}")]
    NonFinite { substep: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} controls, got {got}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("evidence is empty")]
    EmptyEvidence,
    #[error("belief has no samples")]
    EmptyBelief,
    #[error("index {index} out of range for {len} options")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("ranking objective supports at most 5 options, got {0}")]
    TooManyOptions(usize),
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
    #[error("posterior sampler diverged: acceptance rate {rate:.4} below 1%")]
    SamplerDiverged { rate: f64 },
    #[error("optimizer failed: every restart produced a NaN objective")]
    OptimizerFailed,
    #[error("true weight vector has zero norm")]
    ZeroTrueVector,
    #[error("invalid configuration ({field}): {message}")]
    InvalidConfig { field: String, message: String },
    #[error("unknown domain {name:?}; valid domains: {valid}")]
    UnknownDomain { name: String, valid: String },
    #[error("responder timed out")]
    ResponderTimeout,
    #[error("io: {0}")]
    Io(String),
    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
