use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}{}: {message}", column.as_ref().map(|c| format!(", column `{c}`")).unwrap_or_default())]
    Validation {
        /// 1-based data row (the header is row 0).
        row: usize,
        column: Option<String>,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("group `{0}` has zero total weight")]
    DegenerateGroup(String),

    #[error("reweighing infeasible for group `{group}`: {reason}")]
    Infeasible { group: String, reason: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(row: usize, column: Option<&str>, message: impl Into<String>) -> Self {
        Error::Validation {
            row,
            column: column.map(str::to_owned),
            message: message.into(),
        }
    }

    pub(crate) fn config(line: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_)
            | Error::Validation { .. }
            | Error::Parameter(_)
            | Error::Config { .. } => 1,
            Error::DegenerateGroup(_) | Error::Infeasible { .. } | Error::Training(_) => 2,
            Error::Stage { source, .. } => {
                if source.exit_code() == 3 {
                    3
                } else {
                    2
                }
            }
            Error::Io(_) => 3,
            Error::Csv(e) => {
                if e.is_io_error() {
                    3
                } else {
                    1
                }
            }
        }
    }
}
