use std::fmt;
use std::process::ExitCode;

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files or paths. Exit code 2.
    Config(String),
    /// Anything that went wrong while doing the work. Exit code 3.
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<meirl_core::Error> for CliError {
    fn from(e: meirl_core::Error) -> Self {
        use meirl_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            e @ E::Shape { .. } => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
