use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the refinement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("malformed scene: {0}")]
    MalformedScene(String),

    #[error("no support cells for {0}")]
    EmptySupportRegion(String),

    #[error("background region is empty: boxes cover the whole grid")]
    EmptyBackground,

    #[error("missing prototype: {0}")]
    MissingPrototype(String),

    #[error("malformed attention in layer `{label}`, row {row}: {reason}")]
    MalformedAttention {
        label: String,
        row: usize,
        reason: String,
    },

    #[error("attention profile is empty")]
    EmptyProfile,

    #[error("profile mismatch at layer {index}: `{before}` vs `{after}`")]
    ProfileMismatch {
        index: usize,
        before: String,
        after: String,
    },

    #[error("repository format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt repository: {0}")]
    CorruptRepository(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("episode grid too small: {0}")]
    GridTooSmall(String),

    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context: path.into(),
            source,
        }
    }

    /// True for failures that signal a broken numerical or structural
    /// invariant rather than bad input data.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(
            self,
            Error::MalformedAttention { .. } | Error::NonFinite(_)
        )
    }
}
