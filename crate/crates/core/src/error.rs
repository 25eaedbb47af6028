use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("segment id {0} does not fit in 24 bits")]
    Overflow(u64),

    /// Malformed file contents. `offset` is the byte offset of the offending
    /// field when one can be pinned down.
    #[error("format error{}: {msg}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format { offset: Option<u64>, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("category error: {0}")]
    Category(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{predictions} predictions cannot cover {targets} ground-truth targets")]
    Capacity { predictions: usize, targets: usize },

    #[error("could not place instance {index} after {attempts} attempts")]
    Placement { index: usize, attempts: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(offset: impl Into<Option<u64>>, msg: impl Into<String>) -> Self {
        Error::Format { offset: offset.into(), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
