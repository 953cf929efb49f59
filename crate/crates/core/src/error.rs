use std::path::PathBuf;

/// Errors raised anywhere in the training stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A shape, dimension or hyperparameter does not fit the configured setup.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was used outside its documented contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss, gradient or target became NaN or infinite.
    #[error("non-finite value in {what}: {detail}")]
    NonFinite { what: String, detail: String },

    /// The replay buffer holds fewer transitions than requested.
    #[error("replay buffer not ready: holds {have} transitions, batch needs {need}")]
    NotReady { have: usize, need: usize },

    #[error("checkpoint {path:?}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn non_finite(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
