use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall in two families: malformed external input (`Format`,
/// `Io`, `Json`) and violated invariants or preconditions (everything else).
/// The CLI maps the two families to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error comes from unreadable or malformed input data
    /// rather than from a violated invariant.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Format(_) | Error::Io(_) | Error::Json(_))
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
