use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("k-space coordinate {0:?} outside [-0.5, 0.5]")]
    KOutOfRange([f64; 3]),

    #[error("zero quaternion for gaussian {0}")]
    ZeroQuaternion(usize),

    #[error("empty foreground: no voxel reaches the threshold")]
    EmptyForeground,

    #[error("degenerate noise region (standard deviation is zero)")]
    DegenerateNoise,

    #[error("state {0} has no spokes")]
    EmptyState(usize),

    #[error("non-finite gradient in {group} parameter {index}")]
    NonFiniteGradient { group: String, index: usize },

    #[error("training diverged at iteration {iteration}: total loss {loss:.6e} exceeds the divergence limit from initial {initial:.6e}")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
