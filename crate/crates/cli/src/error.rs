use std::path::PathBuf;

use thiserror::Error;

/// Process exit status of the `obstacle-mcf` binary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Pass = 0,
    CheckFailed = 1,
    ConfigError = 2,
    NumericalAbort = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },

    #[error("invalid configuration: {field}: {message}")]
    Invalid { field: String, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bad snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] obstacle_mcf::Error),

    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Invalid { field: field.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Numerical(_) => ExitStatus::NumericalAbort,
            _ => ExitStatus::ConfigError,
        }
    }
}

impl From<obstacle_mcf::solver::RunError<f64>> for CliError {
    fn from(e: obstacle_mcf::solver::RunError<f64>) -> Self {
        use obstacle_mcf::solver::RunError;
        match e {
            RunError::Setup(inner) => CliError::Core(inner),
            RunError::NotWellPrepared(report) => CliError::invalid("audit", report.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
