//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Coarse error classes, used by the command-line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    // configuration
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // io
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization error: {0}")]
    Serialization(String),

    // data / dataset
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-monotonic time index: duplicate t = {0}")]
    NonMonotonicTime(u64),
    #[error("no rows left after dropping missing values")]
    EmptyAfterCleaning,
    #[error("unparseable value `{value}` in column `{column}` (line {line})")]
    Parse {
        column: String,
        value: String,
        line: usize,
    },
    #[error("invalid first prediction time {fpt} for run length {total}")]
    InvalidFpt { fpt: u64, total: u64 },
    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("unknown run id `{0}`")]
    UnknownRunId(String),
    #[error("not enough rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    // features
    #[error("window is all zeros (RMS = 0)")]
    AllZeroWindow,
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    // forecaster
    #[error("window length {got} does not match sequence length {expected}")]
    BadWindowLength { expected: usize, got: usize },
    #[error("run of length {got} is too short, need at least {needed}")]
    RunTooShort { needed: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    // onset
    #[error("reference window needs at least 2 points, got {0}")]
    RefTooShort(usize),

    // ensemble
    #[error("empty segment: onset {onset} is not before failure index {failure}")]
    EmptySegment { onset: u64, failure: u64 },
    #[error("non-finite value in training data")]
    NonFiniteInput,

    // metrics
    #[error("target series is constant; R² is undefined")]
    ConstantTarget,
    #[error("no scorable points (every target is zero)")]
    NoScorablePoints,

    // pipeline
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Config,
            Error::Io { .. } | Error::Csv(_) | Error::Serialization(_) => ErrorClass::Io,
            Error::NonFiniteLoss { .. }
            | Error::NonFiniteInput
            | Error::ConstantTarget
            | Error::NoScorablePoints => ErrorClass::Numeric,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
