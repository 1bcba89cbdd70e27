use poiverify::Error as CoreError;

/// Failure classes of the command-line tool. Each maps to its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing dependency: {0}")]
    Dependency(String),
    #[error("corrupt artifact: {0}")]
    Corruption(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Dependency(_) => 2,
            CliError::Corruption(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    /// Short tag used in service error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Dependency(_) => "dependency",
            CliError::Corruption(_) => "corruption",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// Wraps a failure to decode a stored artifact.
    pub fn corrupt(what: &str, e: impl std::fmt::Display) -> Self {
        CliError::Corruption(format!("{what}: {e}"))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Parameter(_) => CliError::Usage(e.to_string()),
            CoreError::Dependency(_) => CliError::Dependency(e.to_string()),
            CoreError::Format(_) | CoreError::Version { .. } | CoreError::Integrity(_) => {
                CliError::Corruption(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
