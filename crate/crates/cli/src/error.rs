use std::fmt;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: unknown command or flag (exit 2).
    Usage(String),
    /// Bad configuration value or key (exit 2).
    Config(String),
    /// IO or runtime failure (exit 2).
    Run(String),
    /// A verification command found failures (exit 1).
    VerificationFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::VerificationFailed(_) => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(m) => write!(f, "{m}"),
            CliError::VerificationFailed(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<mmfs_train::TrainError> for CliError {
    fn from(e: mmfs_train::TrainError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<mmfs_data::DataError> for CliError {
    fn from(e: mmfs_data::DataError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<mmfs_models::ModelError> for CliError {
    fn from(e: mmfs_models::ModelError) -> Self {
        CliError::Run(e.to_string())
    }
}
