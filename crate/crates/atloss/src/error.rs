//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar input that must be finite was NaN or infinite.
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    /// A physical-scale intensity was negative.
    #[error("negative intensity at cell {index}: {value} mm/h")]
    NegativeIntensity { index: usize, value: f64 },

    /// Grid dimensions with zero cells.
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyGrid { height: usize, width: usize },

    /// Value buffer length does not match the declared shape.
    #[error("value count {len} does not match {height}x{width} = {expected} cells")]
    ValueCount {
        height: usize,
        width: usize,
        len: usize,
        expected: usize,
    },

    /// Two fields that must share a shape do not.
    #[error("shape mismatch: {left_height}x{left_width} vs {right_height}x{right_width}")]
    ShapeMismatch {
        left_height: usize,
        left_width: usize,
        right_height: usize,
        right_width: usize,
    },

    /// A parameter failed validation.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// A sequence is too short to build any window.
    #[error("sequence of {len} fields is shorter than the window length {window}")]
    SequenceTooShort { len: usize, window: usize },

    /// A noise fraction outside the configured bounds.
    #[error("noise fraction {fraction} outside configured bounds [{lo}, {hi}]")]
    FractionOutOfBounds { fraction: f64, lo: f64, hi: f64 },

    /// A normalization range that cannot be inverted.
    #[error("degenerate normalization range: max {max} must exceed min {min}")]
    DegenerateRange { min: f64, max: f64 },

    /// Exhaustive penalty enumeration asked for too many cells.
    #[error("penalty oracle limited to {max} cells, got {got}")]
    TooManyCells { got: usize, max: usize },

    /// Training was asked to run on an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    /// The training loss became NaN or infinite; the run is aborted rather
    /// than clamped so instability stays observable.
    #[error("non-finite loss ({value}) at epoch {epoch}, batch {batch}; aborting run")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    /// Paired consistency configs differ somewhere other than the track.
    #[error("consistency configs must differ only in track/noise, but `{field}` differs")]
    ConfigMismatch { field: &'static str },

    /// Tensor shape violation inside the trainer.
    #[error("tensor shape mismatch: expected {expected}, got {got}")]
    TensorShape { expected: String, got: String },

    /// A grid or checkpoint file failed structural validation.
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for an [`Error::InvalidParam`].
    pub fn invalid_param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
