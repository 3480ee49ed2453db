use std::fmt;

/// A failure plus the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, config or paths: exit code 2.
    Usage(anyhow::Error),
    /// Anything that went wrong while doing the work: exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }

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
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dsparse_core::Error> for CliError {
    fn from(e: dsparse_core::Error) -> Self {
        use dsparse_core::Error as E;
        match e {
            E::Parameter(_) | E::Parse { .. } | E::Vocab { .. } => CliError::Usage(e.into()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
