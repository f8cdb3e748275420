//! Two-tier error model: configuration mistakes exit with code 2 before any
//! real work starts; everything that fails afterwards exits with code 1.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Rejected user input (flag values, config files, parameter ranges).
    Config(String),
    /// Failure while executing an accepted configuration.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

pub type CmdResult = Result<(), CliError>;
