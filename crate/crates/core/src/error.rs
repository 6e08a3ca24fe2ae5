use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated capture record at packet {ordinal}")]
    TruncatedRecord { ordinal: usize },

    #[error("malformed packet: {0}")]
    Malformed(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("class {class} has {available} samples, {requested} requested (short by {})", requested - available)]
    UndersizedPool {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("class-count mismatch: expected {expected}, found {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
