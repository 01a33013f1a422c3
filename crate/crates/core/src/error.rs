//! Error type shared by every module.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeftError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("data validation failed: {0}")]
    DataValidation(String),

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("numerical divergence at epoch {epoch}, batch {batch}: {message}")]
    Divergence { epoch: usize, batch: usize, message: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<DeftError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DeftError {
    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        DeftError::Dimension { expected, actual }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DeftError::Io { path: path.into(), source }
    }

    /// Attaches the training position to a divergence error.
    pub(crate) fn at(self, epoch: usize, batch: usize) -> Self {
        match self {
            DeftError::Divergence { message, .. } => DeftError::Divergence { epoch, batch, message },
            other => other,
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            DeftError::Stage { .. } => self,
            other => DeftError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            DeftError::Stage { source, .. } => source.exit_code(),
            DeftError::Config(_) => 2,
            DeftError::Divergence { .. } => 4,
            DeftError::Dimension { .. }
            | DeftError::DegenerateInput(_)
            | DeftError::EmptyInput(_)
            | DeftError::Parse { .. }
            | DeftError::DataValidation(_)
            | DeftError::Calibration(_)
            | DeftError::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = DeftError> = std::result::Result<T, E>;
