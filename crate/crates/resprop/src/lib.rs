//! File formats, the parallel runner and the command line for
//! [`resprop_core`].

pub mod cli;
pub mod config;
pub mod report;
pub mod runner;

/// Errors that end a command, with their exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => cli::EXIT_CONFIG,
            CliError::Runtime(_) => cli::EXIT_RUNTIME,
        }
    }
}

impl From<resprop_core::Error> for CliError {
    fn from(e: resprop_core::Error) -> Self {
        match e.root() {
            resprop_core::Error::InvalidConfig(_) | resprop_core::Error::Contract(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
