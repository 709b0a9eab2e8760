use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("cannot encode value {value} at ({row}, {col}) as {encoding}")]
    Encoding {
        encoding: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("training failed: {0}")]
    Training(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
