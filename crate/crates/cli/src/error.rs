use std::path::PathBuf;

use qkin::QkinError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config file {}: {source}", path.display())]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}:{line}:{column}: {message}", path.display())]
    ConfigParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration, field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error("cannot read input {}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("numerical failure: {source} (diagnostic snapshot: {})", snapshot.display())]
    Numerical {
        source: QkinError,
        snapshot: PathBuf,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical { .. } | CliError::Write { .. } => 1,
            _ => 2,
        }
    }

    pub fn field(field: &str, message: impl ToString) -> Self {
        CliError::ConfigField {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

/// Attaches a config field name to errors raised while setting up a run.
pub trait FieldContext<T> {
    fn field(self, field: &str) -> Result<T, CliError>;
}

impl<T> FieldContext<T> for Result<T, QkinError> {
    fn field(self, field: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::field(field, e))
    }
}
