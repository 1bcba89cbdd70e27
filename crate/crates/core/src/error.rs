use std::io;

/// Errors produced by the verification library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violates its documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Stored data breaks a structural invariant (duplicate ids, non-unit vectors, ...).
    #[error("integrity violation: {0}")]
    Integrity(String),
    /// Input text or bytes could not be decoded.
    #[error("malformed input: {0}")]
    Format(String),
    /// An operation was invoked on an object that cannot serve it (e.g. an empty lexicon).
    #[error("invalid state: {0}")]
    State(String),
    /// A vector that must be normalized has zero length.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    /// A required upstream artifact is missing.
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("{what}: unsupported format version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
