use std::io;

use crate::trace::TraceError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Trace(#[from] TraceError),

    #[error("layer {layer} out of range (model has {n_layers} layers)")]
    LayerOutOfRange { layer: usize, n_layers: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("difficulty group {level} is empty")]
    EmptyGroup { level: u32 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("direction for level {level} at layer {layer} has zero norm; cosine undefined")]
    ZeroNorm { layer: usize, level: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("prompt must end with the think token {think}")]
    PromptNotThink { think: u32 },

    #[error("malformed report {path}: {reason}")]
    MalformedReport { path: String, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}
