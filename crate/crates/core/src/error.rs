use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {field}{}: {message}", chunk.map(|c| format!(" (chunk {c})")).unwrap_or_default())]
    Validation {
        field: &'static str,
        chunk: Option<usize>,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid motion profile: {0}")]
    InvalidProfile(String),

    #[error("frame dimensions differ: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("need at least {needed} frames/pixels, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("level {level} out of range [1, {max}]")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFiniteGradient { iteration: Option<u64> },

    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("invalid target range: {0}")]
    InvalidRange(String),

    #[error("bad thresholds: {0}")]
    BadThresholds(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("no checkpoint loaded for profile {0:?}")]
    CheckpointMissing(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown QoE profile {0:?}")]
    UnknownProfile(String),

    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training worker failed: {0}")]
    Worker(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(
        field: &'static str,
        chunk: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            field,
            chunk,
            message: message.into(),
        }
    }
}
