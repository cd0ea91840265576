//! Crate-wide error type and result alias.

use std::path::PathBuf;

use crate::imaging::Rect;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A pixel buffer does not match its declared dimensions.
    #[error("{context}: buffer of {actual} bytes does not match {width}x{height}")]
    BufferMismatch {
        context: &'static str,
        width: u32,
        height: u32,
        actual: usize,
    },

    /// A rectangle falls outside the image it was applied to.
    #[error("rect ({},{}) {}x{} out of bounds for {width}x{height} image", rect.x, rect.y, rect.w, rect.h)]
    RectOutOfBounds { rect: Rect, width: u32, height: u32 },

    /// Training input that cannot support learning (single class, too few samples).
    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    /// A boosting round produced a weak learner no better than chance.
    #[error("boosting stalled: best weighted error {err} is not below 0.5")]
    BoostingStall { err: f64 },

    /// Cascade training ran out of positives before the named stage.
    #[error("training collapsed at stage {stage}: {reason}")]
    TrainingCollapse { stage: usize, reason: String },

    /// Text input failed to parse; line numbers are 1-based.
    #[error("parse error at line {line}: {msg}")]
    ParseLine { line: usize, msg: String },

    /// Binary input failed to parse; offset is the byte position of the problem.
    #[error("parse error at byte {offset}: {msg}")]
    ParseByte { offset: usize, msg: String },

    /// A model file declared a format version this build does not understand.
    #[error("unsupported model version: {0}")]
    Version(String),

    /// Invalid argument or malformed in-memory input.
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent configuration (duplicate labels, bad ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// Network send failed after exhausting retries.
    #[error("transport error after {attempts} attempts: {source}")]
    Transport {
        attempts: u32,
        #[source]
        source: std::io::Error,
    },

    /// Filesystem failure, tagged with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
