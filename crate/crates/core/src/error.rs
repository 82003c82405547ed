use std::path::PathBuf;

use thiserror::Error;

use crate::scenegen::OcclusionLevel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The scene produced nothing usable; the caller should draw a new seed.
    #[error("resample: {0}")]
    Resample(String),

    #[error("quota for level `{level}` not filled after {attempts} attempts ({filled}/{target})")]
    QuotaStarved {
        level: OcclusionLevel,
        attempts: u64,
        filled: usize,
        target: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("invariant violated on `{field}`: {detail}")]
    Invariant { field: String, detail: String },

    #[error("occlusion sidecar has no entry for image_id(s) {0:?}")]
    MissingSidecar(Vec<u64>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("category id {0} is not in the taxonomy")]
    UnknownCategory(u32),

    #[error("prediction segment {segment_id} in image {image_id} has no score; rerun with --no-ap")]
    MissingScores { image_id: u64, segment_id: u32 },

    #[error("empty evaluation set: {0}")]
    EmptyEvaluation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// Raised when a loss turns NaN/inf; training stops.
    #[error("non-finite value in {0}; aborting training")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invariant(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 2 for bad inputs, 3 for failures at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Domain(_)
            | Error::Format(_)
            | Error::Invariant { .. }
            | Error::MissingSidecar(_)
            | Error::DimensionMismatch(_)
            | Error::UnknownCategory(_)
            | Error::MissingScores { .. }
            | Error::EmptyEvaluation(_)
            | Error::Contract(_)
            | Error::Json { .. }
            | Error::Image { .. } => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 3,
        }
    }
}
