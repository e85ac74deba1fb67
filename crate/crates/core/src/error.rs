use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected} but found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        found: Shape,
    },

    #[error("{op}: channel mismatch, expected {expected} but found {found}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: stride-2 convolution needs odd spatial sizes, got {height}x{width}")]
    EvenGrid {
        op: &'static str,
        height: usize,
        width: usize,
    },

    #[error("invalid tensor data: {0}")]
    InvalidData(String),

    #[error("grid size {size} is not of the form 2^k - 1 with enough levels ({reason})")]
    InvalidGridSize { size: usize, reason: &'static str },

    #[error("velocity ({vx}, {vy}) does not have unit Euclidean norm")]
    NonUnitVelocity { vx: f64, vy: f64 },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("iteration diverged: relative residual {relative_residual:e} at iteration {iteration}")]
    Diverged { iteration: usize, relative_residual: f64 },

    #[error("loss is not a scalar node")]
    NonScalarLoss,

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error("image corpus at {path}: {reason}")]
    Corpus { path: PathBuf, reason: String },

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
