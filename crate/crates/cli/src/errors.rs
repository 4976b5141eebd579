use std::fmt;

/// Failure classes mapped onto process exit codes: usage mistakes exit 1,
/// unreadable or malformed inputs exit 2, and everything that goes wrong
/// after the inputs parsed cleanly exits 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(anyhow::Error),
    Compute(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Input(e) | CliError::Compute(e) => write!(f, "{e:#}"),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn compute(msg: impl Into<String>) -> CliError {
    CliError::Compute(anyhow::anyhow!(msg.into()))
}

pub trait ErrorClass<T> {
    fn or_input(self, what: impl fmt::Display) -> Result<T, CliError>;
    fn or_compute(self, what: impl fmt::Display) -> Result<T, CliError>;
}

impl<T, E> ErrorClass<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn or_input(self, what: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Input(anyhow::Error::new(e).context(what.to_string())))
    }

    fn or_compute(self, what: impl fmt::Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::Compute(anyhow::Error::new(e).context(what.to_string())))
    }
}
