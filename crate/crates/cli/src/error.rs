use std::fmt;
use std::process::ExitCode;

use triso_morph::Error;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input documents (exit 2).
    Usage(String),
    /// Filesystem or image codec failure (exit 3).
    Io(String),
    /// Broken internal invariant (exit 4).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 4,
        })
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Image { .. } => CliError::Io(e.to_string()),
            Error::Csv(ref c) if c.is_io_error() => CliError::Io(e.to_string()),
            Error::InvalidConfig(_)
            | Error::InvalidInput(_)
            | Error::InvalidObservations(_)
            | Error::Json { .. }
            | Error::Csv(_)
            | Error::InvalidClassCode(_)
            | Error::NonSquare(..)
            | Error::DimensionMismatch(..)
            | Error::Nesting(_)
            | Error::DegeneratePolygon(_)
            | Error::SectionOutOfBounds { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
