use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate weights: no strictly positive entry")]
    DegenerateWeights,

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid domain set: {0}")]
    InvalidDomains(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("domain index {index} out of range for {k} domains")]
    DomainOutOfRange { index: usize, k: usize },

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("infinite loss for token {token} in domain {domain}")]
    InfiniteLoss { domain: usize, token: u32 },

    #[error("model is frozen and rejects updates")]
    FrozenModel,

    #[error("model does not support training updates")]
    NotTrainable,

    #[error("loss vector has length {actual} but example `{example_id}` has {expected} tokens")]
    LossLengthMismatch {
        example_id: String,
        expected: usize,
        actual: usize,
    },

    #[error("no losses recorded for example `{example_id}` ({role})")]
    MissingLosses { example_id: String, role: String },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("domain `{0}` has no examples")]
    EmptyDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("weights sum to {sum}, outside tolerance {tolerance} of 1")]
    WeightSum { sum: f64, tolerance: f64 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or configuration rather than by a
    /// failure during computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::InfiniteLoss { .. } | Error::NonFinite { .. } | Error::DegenerateWeights
        )
    }
}
