use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 usage or configuration, 3 I/O (including unreadable or malformed input
    /// files), 4 numeric failure.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        })
    }
}

impl From<ppk_core::Error> for CliError {
    fn from(e: ppk_core::Error) -> Self {
        use ppk_core::Error as E;
        match e {
            E::Io { path, source } => CliError::Io { path, source },
            E::Format { .. } | E::Json(_) | E::Shape(_) | E::Overflow(_) => CliError::Data(e.to_string()),
            E::Category(_) | E::Input(_) | E::Capacity { .. } | E::Placement { .. } => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ppk_autodiff::Error> for CliError {
    fn from(e: ppk_autodiff::Error) -> Self {
        use ppk_autodiff::Error as E;
        match e {
            E::Io { path, source } => CliError::Io { path, source },
            E::Numeric { .. } => CliError::Numeric(e.to_string()),
            E::Format { .. } | E::Shape(_) => CliError::Data(e.to_string()),
            E::Input(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ppk_model::Error> for CliError {
    fn from(e: ppk_model::Error) -> Self {
        use ppk_model::Error as E;
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            E::Core(e) => e.into(),
            E::Tensor(e) => e.into(),
            E::Io { path, source } => CliError::Io { path, source },
            E::Json(_) => CliError::Data(e.to_string()),
            E::Config(_) | E::Vocab { .. } | E::Input(_) | E::Diverged { .. } => CliError::Usage(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
