use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("cannot place {fleet} vehicles of spacing {spacing} m on a {loop_length} m loop")]
    Placement {
        fleet: usize,
        spacing: f64,
        loop_length: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("normalization constant must be positive, got {0}")]
    NonPositiveNorm(f64),

    #[error("non-finite value in Q-vector")]
    NonFinite,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("objective sets differ between Q-vectors and weights")]
    ObjectiveMismatch,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
