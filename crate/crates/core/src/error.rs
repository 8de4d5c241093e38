use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("pairing error: unmatched ids [{}]", .0.join(", "))]
    Pairing(Vec<String>),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

/// Coarse error category, stable across releases; surfaced by the CLI and the C API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Dimension,
    Config,
    Contract,
    Data,
    Pairing,
    Numeric,
    Format,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_) => ErrorKind::Dimension,
            Error::Config(_) => ErrorKind::Config,
            Error::Contract(_) => ErrorKind::Contract,
            Error::Data(_) => ErrorKind::Data,
            Error::Pairing(_) => ErrorKind::Pairing,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Format(_) => ErrorKind::Format,
            Error::Io(_) | Error::Image(_) => ErrorKind::Io,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Dimension => "dimension",
            ErrorKind::Config => "config",
            ErrorKind::Contract => "contract",
            ErrorKind::Data => "data",
            ErrorKind::Pairing => "pairing",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Format => "format",
            ErrorKind::Io => "io",
        };
        f.write_str(s)
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}
pub(crate) use {config_err, contract_err, dim_err};
