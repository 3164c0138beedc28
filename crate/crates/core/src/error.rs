use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {what} = {value}")]
    InvalidDimension { what: &'static str, value: usize },

    #[error("shape mismatch in {dim}: expected {expected}, got {actual}")]
    ShapeMismatch {
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("view {view} is fully covered by the metal trace; cannot interpolate")]
    FullyTracedView { view: usize },

    #[error("could not place implant {implant} after {attempts} attempts")]
    PlacementFailed { implant: usize, attempts: usize },

    #[error("metric support is empty (mask excludes every pixel)")]
    EmptySupport,

    #[error("solver state became non-finite at stage {stage} ({field})")]
    NonFiniteState { stage: usize, field: &'static str },

    #[error("truncated payload {path}: expected {expected} bytes, found {actual}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("unknown raster kind {0:?}")]
    UnknownKind(String),

    #[error("malformed sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("i/o error on {path}: {source}")]
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

    /// Validation failures are caller mistakes (bad shapes, bad configs, bad
    /// files); everything else is a runtime failure of the pipeline.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension { .. }
                | Error::ShapeMismatch { .. }
                | Error::NonFinite(_)
                | Error::InvalidConfig(_)
                | Error::TruncatedPayload { .. }
                | Error::UnknownKind(_)
                | Error::Sidecar { .. }
                | Error::ConfigParse(_)
        )
    }
}
