use std::fmt;

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or missing inputs (exit code 2).
    Usage(String),
    /// Failure while running a valid request (exit code 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<invpde::Error> for CliError {
    fn from(e: invpde::Error) -> Self {
        match e {
            invpde::Error::InvalidConfig(_)
            | invpde::Error::InvalidTerm(_)
            | invpde::Error::InvalidBoost(_)
            | invpde::Error::NotGridAligned { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

pub(crate) fn runtime(m: impl Into<String>) -> CliError {
    CliError::Runtime(m.into())
}
