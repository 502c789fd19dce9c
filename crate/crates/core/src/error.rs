use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported format version {found}")]
    UnsupportedVersion { path: PathBuf, found: u32 },

    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("{path}: truncated payload (expected {expected} bytes, found {found})")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingData { path: PathBuf, extra: u64 },

    #[error("non-finite value at frame {frame}, component {component}")]
    NonFinite { frame: usize, component: usize },

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank-deficient training data: need {required} independent directions, achievable rank is {achievable}")]
    RankDeficient { required: usize, achievable: usize },

    #[error("frame range {first}..={last} out of bounds for {frame_count} frames")]
    FrameRange {
        first: usize,
        last: usize,
        frame_count: usize,
    },

    #[error("missing features for video {0:?}")]
    MissingFeatures(String),

    #[error("unknown group {0:?}")]
    UnknownGroup(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("video {0:?} was used to fit a model it is being evaluated with")]
    Leakage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the invocation (bad configuration, missing
    /// inputs, unknown groups) rather than by the contents of the data.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::MissingFeatures(_) | Error::UnknownGroup(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
