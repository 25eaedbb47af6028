use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ppk_core::Error),

    #[error(transparent)]
    Tensor(#[from] ppk_autodiff::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token index {index} out of range for vocabulary of {size}")]
    Vocab { index: usize, size: usize },

    #[error("{0}")]
    Input(String),

    /// Training produced a non-finite loss; `last_good` names the checkpoint written
    /// with the parameters from before the failing step.
    #[error("non-finite loss at step {step}; last good parameters saved to {}", last_good.display())]
    Diverged { step: u64, last_good: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::Tensor(ppk_autodiff::Error::Numeric { .. }))
    }
}
