use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// The variants are grouped so that a front end can map them onto exit
/// codes: `Config` is a usage problem, `Io`/`Parse`/`Data` concern input
/// files, everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({row}, {col}) out of bounds for {height}x{width} image")]
    Bounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("batch composition error: {0}")]
    BatchComposition(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
