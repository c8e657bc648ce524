use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MmfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MmfError {
    #[error("segment length {segment_length} does not divide look-back length {lookback}")]
    Divisibility { segment_length: usize, lookback: usize },

    #[error("scale ladder is empty")]
    EmptyLadder,

    #[error("invalid scale ladder: {0}")]
    InvalidLadder(String),

    #[error("insufficient data: need at least {needed} rows, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient at {context}")]
    NonFiniteGradient { context: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u64, column: usize, message: String },

    #[error("missing value at line {line}, column {column} ({channel})")]
    MissingValue { line: u64, column: usize, channel: String },

    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("split `{0}` contains no windows")]
    EmptySplit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure classes, used by front ends to pick stable exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl MmfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MmfError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            MmfError::Divisibility { .. }
            | MmfError::EmptyLadder
            | MmfError::InvalidLadder(_)
            | MmfError::Shape(_)
            | MmfError::Config(_) => ErrorClass::Config,
            MmfError::NonFiniteGradient { .. } => ErrorClass::Numerical,
            MmfError::InsufficientData { .. }
            | MmfError::EmptyInput
            | MmfError::Parse { .. }
            | MmfError::MissingValue { .. }
            | MmfError::ChannelMismatch { .. }
            | MmfError::EmptySplit(_)
            | MmfError::Io { .. } => ErrorClass::Data,
        }
    }
}
