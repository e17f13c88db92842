use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid {height}x{width} cannot hold any region")]
    GridTooSmall { height: usize, width: usize },
    #[error("region sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: u32 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no query has a valid gallery match")]
    NoValidGallery,
    #[error("non-finite loss at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss { epoch: u32, iteration: u64 },
    #[error("malformed filename: {path}")]
    MalformedFilename { path: PathBuf },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {needed} identities, found {found}")]
    TooFewIdentities { needed: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
