use std::fmt;
use std::path::Path;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Data = 2,
    Invariant = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Data,
            message: message.into(),
        }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Self {
            code: ExitCode::Invariant,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }

    /// Invalid values in a configuration are the caller's mistake, not the data's.
    pub fn from_config(e: fovea_core::Error) -> Self {
        match e {
            fovea_core::Error::Invalid { .. } | fovea_core::Error::GridTooSmall(_) => Self::usage(e.to_string()),
            other => other.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fovea_core::Error> for CliError {
    fn from(e: fovea_core::Error) -> Self {
        if e.is_invariant_violation() {
            Self::invariant(e.to_string())
        } else {
            Self::data(e.to_string())
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
