use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the vision pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// A decoded value violated the message schema; `path` names the field,
    /// e.g. `detections[0].confidence`.
    #[error("validation error at {path}: {reason}")]
    Validation { path: String, reason: String },

    #[error("clock went backwards: {previous} -> {now}")]
    ClockSkew { previous: f64, now: f64 },

    #[error("no data: {0}")]
    NoData(String),

    #[error("average precision undefined for class {0}: no ground truth")]
    UndefinedAp(u32),

    #[error("no such topic: {0}")]
    NoSuchTopic(String),

    #[error("detector unavailable: {0}")]
    DetectorUnavailable(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("timed out after {0} ms")]
    Timeout(u64),

    #[error("ambiguous shape: {0}")]
    AmbiguousShape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}{}: {reason}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Load {
        path: PathBuf,
        line: Option<usize>,
        reason: String,
    },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::InvalidGeometry(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, line: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
