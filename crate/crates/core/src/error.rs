use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("degenerate mask for sample {sample}: {reason}")]
    DegenerateMask { sample: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no samples found in {0}")]
    NoSamples(PathBuf),

    #[error("missing mask for image {image} (expected {expected})")]
    MissingMask { image: String, expected: PathBuf },

    #[error("path not found: {0}")]
    PathNotFound(PathBuf),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("topology mismatch:\n{0}")]
    Topology(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
