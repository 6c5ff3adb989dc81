use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Rejected configuration; the message names the offending key.
    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{context}: {source}")]
    Core { context: String, source: sepp::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core { source, .. } if source.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl From<sepp::Error> for CliError {
    fn from(source: sepp::Error) -> Self {
        Self::Core {
            context: "error".into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a step name to core errors.
pub trait Context<T> {
    fn context(self, what: &str) -> CliResult<T>;
}

impl<T> Context<T> for sepp::Result<T> {
    fn context(self, what: &str) -> CliResult<T> {
        self.map_err(|source| CliError::Core {
            context: what.to_string(),
            source,
        })
    }
}
