use std::path::PathBuf;

use thiserror::Error;

use crate::fixedpoint::QFormat;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixedPointError {
    #[error("invalid fixed-point format: {total_bits} total bits, {frac_bits} fractional")]
    InvalidFormat { total_bits: u8, frac_bits: u8 },
    #[error("raw value {raw} does not fit {format}")]
    OutOfRange { raw: i32, format: QFormat },
    #[error("format mismatch: {left} vs {right}")]
    FormatMismatch { left: QFormat, right: QFormat },
    #[error("stochastic rounding must drop bits (from {from} to {to} fractional bits)")]
    NotNarrowing { from: u8, to: u8 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("rate undefined: no candidate updates")]
    UndefinedRate,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
