use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {samples} samples, need at least {frame_len} for one frame")]
    InputTooShort { samples: usize, frame_len: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("unsupported audio encoding: {0}")]
    UnsupportedAudio(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot synthesize unknown")]
    CannotSynthesizeUnknown,

    #[error("class {0} has fewer than 2 train samples")]
    TooFewSamples(String),

    #[error("shape mismatch at layer {layer}: {message}")]
    Shape { layer: String, message: String },

    #[error("label index {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },

    #[error("divergence: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty vector store")]
    EmptyStore,

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("length mismatch: {gold} gold labels vs {pred} predictions")]
    LengthMismatch { gold: usize, pred: usize },

    #[error("pipeline {0} is unavailable: no model loaded")]
    Unavailable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
