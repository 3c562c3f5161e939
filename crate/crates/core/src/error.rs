use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),

    #[error("unknown city {0:?}")]
    UnknownCity(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("audio parse error: {0}")]
    AudioParse(String),

    #[error("feature table {path}: {message}")]
    FeatureTable { path: PathBuf, message: String },

    #[error("posterior matrix {path}: {message}")]
    Posterior { path: PathBuf, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("utterance too short: {frames} frames, need at least {min_frames}")]
    TooShort { frames: usize, min_frames: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("missing side data for {set}: {ids:?}")]
    MissingSideData { set: String, ids: Vec<String> },

    #[error("model error: {0}")]
    Model(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
