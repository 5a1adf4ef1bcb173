use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no frame boundaries found in envelope")]
    NoFrameBoundaries,

    #[error("too few frames: need {needed}, found {found}")]
    TooFewFrames { needed: usize, found: usize },

    #[error("frame {frame} spans samples {start}..{end} but envelope has {len}")]
    FrameOutOfRange {
        frame: usize,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("no uniform region; supply v_target mask")]
    NoUniformRegion,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("objective increased after backtracking at iteration {iteration}: {trace:?}")]
    Divergence { iteration: usize, trace: Vec<f64> },

    #[error("config: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Pipeline stage of a wrapped error.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
