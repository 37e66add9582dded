use thiserror::Error;

/// Failures grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Capability(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<gpmpc::Error> for CliError {
    fn from(e: gpmpc::Error) -> Self {
        use gpmpc::Error as E;
        let msg = e.to_string();
        match e {
            E::Dimension { .. } | E::Input(_) | E::Unknown { .. } | E::Json(_) => CliError::Config(msg),
            E::Factorization { .. } | E::Training(_) | E::Divergence { .. } => CliError::Numerical(msg),
            E::Capability { .. } => CliError::Capability(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
