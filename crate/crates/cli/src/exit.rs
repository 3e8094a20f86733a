use std::path::PathBuf;

use clothswap_core::Error;
use thiserror::Error;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const RUNTIME: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("I/O error on {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => USAGE,
            CliError::Io(..) => DATA,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Argument(_) => USAGE,
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::Data(_)
                | Error::Protocol(_)
                | Error::Evaluation(_) => DATA,
                Error::Bounds { .. }
                | Error::Shape(_)
                | Error::Consistency(_)
                | Error::BatchComposition(_)
                | Error::Training(_) => RUNTIME,
            },
        }
    }
}
