use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    ConfigField { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed trace {path}: {message}")]
    Trace { path: PathBuf, message: String },
    #[error("run aborted: {0}")]
    Run(#[from] dgreedy::protocol::RunError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn field(path: impl Into<String>, message: impl ToString) -> CliError {
        CliError::ConfigField {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit status: 1 when the protocol itself failed, 2 for bad input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(_) => 1,
            _ => 2,
        }
    }
}
