use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes or axes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An API was called outside its contract (non-scalar loss, reused tape, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed user input: duplicate ids, unparsable CSV, negative traffic.
    #[error("input error: {0}")]
    Input(String),

    #[error("unknown key: {0}")]
    Key(String),

    #[error("index out of range: {0}")]
    Index(String),

    /// A stored record failed its checksum.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Wrong magic, unsupported version, truncated container.
    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A checkpoint cannot be transferred onto the requested configuration.
    #[error("transfer error: {0}")]
    Transfer(String),

    /// NaN or infinity showed up in activations or the loss.
    #[error("numeric failure in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }
}
