use std::fmt;

use thiserror::Error;

/// Which surrogate term a quadratic-transform value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Common,
    Private(usize),
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stream::Common => write!(f, "common stream"),
            Stream::Private(k) => write!(f, "private stream of user {k}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-positive surrogate value {value} for the {stream}")]
    NonPositivePhi { stream: Stream, value: f64 },

    #[error("beamformer {index} is zero and cannot be rescaled to a positive power")]
    ZeroBeamformer { index: usize },

    #[error("solver iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("record {index} has no oracle label")]
    MissingLabel { index: usize },

    #[error("record {index} has a non-positive label {value}")]
    NonPositiveLabel { index: usize, value: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("parameter shapes do not match the dataset: {0}")]
    ShapeMismatch(String),

    #[error("shifted power budget {budget} W is not above (U+1)·p0 = {floor} W on record {record}")]
    InfeasibleShift {
        record: usize,
        budget: f64,
        floor: f64,
    },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },

    #[error("truncated dataset: header announces {expected} records, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Error {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_sample(self, index: usize) -> Error {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
