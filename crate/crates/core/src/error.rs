use thiserror::Error;

/// Errors produced anywhere in the simulation and correction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("mode does not fit the grid: waist {waist} mm outside ({min} mm, {max} mm)")]
    GridTooSmall { waist: f64, min: f64, max: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficients are not normalized (sum of squared moduli = {0})")]
    NotNormalized(f64),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("image is identically zero")]
    ZeroImage,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("insufficient training data: class {class} has {got} samples, need at least {needed}")]
    InsufficientData { class: usize, got: usize, needed: usize },

    #[error("non-physical density matrix: {0}")]
    NonPhysical(String),

    #[error("model has not been trained")]
    UntrainedModel,

    #[error("malformed file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
