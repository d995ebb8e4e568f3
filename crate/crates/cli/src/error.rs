use thiserror::Error;

/// Failures of a CLI run, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("infeasible reference: {0}")]
    InfeasibleReference(String),
    #[error("simulation diverged: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::InfeasibleReference(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
