use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed mask: {0}")]
    MalformedMask(String),

    #[error("mask dimension mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    DimensionMismatch {
        left_h: u32,
        left_w: u32,
        right_h: u32,
        right_w: u32,
    },

    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    VectorDimension { expected: usize, got: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("track {track_id} frame {frame}: region has neither scores nor an embedding with clip text embeddings")]
    MissingEvidence { track_id: u32, frame: u32 },

    #[error("missing predictions for clips: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("empty threshold candidate list")]
    EmptyCandidates,

    #[error("unknown track reference: clip {clip_id} track {track_id}")]
    UnknownTrack { clip_id: String, track_id: u32 },

    #[error("label index mismatch at clip {clip_id} track {track_id}")]
    IndexMismatch { clip_id: String, track_id: u32 },

    #[error("{path}: {location}: {message}")]
    Load {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("missing artifact {0}: required by stage `{1}`")]
    MissingArtifact(PathBuf, &'static str),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
