use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Exit codes of the command-line tool.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
}

/// Syntax error in one of the text formats, positioned 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            column,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] streamopt::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Model(streamopt::Error::Infeasible(_)) => exit::INFEASIBLE,
            CliError::Model(streamopt::Error::InvalidConfig(_)) => exit::USAGE,
            _ => exit::DATA,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
