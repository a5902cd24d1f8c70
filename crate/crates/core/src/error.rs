use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward root was not produced by a recorded graph")]
    NotInGraph,

    #[error("trainable parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("non-finite value {value} at coordinate {index} during {context}")]
    NonFinite {
        context: String,
        index: usize,
        value: f64,
    },

    #[error("{what}: expected {expected} channels, got {got}")]
    ChannelMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("integrity check failed for {path}: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("embedding provider `{provider}` failed after {attempts} attempt(s): {message}")]
    Provider {
        provider: String,
        attempts: u32,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("loss became non-finite at step {step}; last update norms: {update_norms}")]
    Diverged { step: usize, update_norms: String },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
