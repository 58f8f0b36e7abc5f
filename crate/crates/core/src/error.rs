use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FocusError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FocusError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },

    #[error("non-finite loss at epoch {epoch} on bag {bag_id}")]
    NonFiniteLoss { epoch: usize, bag_id: String },

    #[error("row {index} has zero norm")]
    ZeroNormRow { index: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} has {available} training bags, need {required}")]
    InsufficientShots {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("class {class} has no bags")]
    EmptyClass { class: usize },

    #[error("parameter `{name}` has no gradient")]
    MissingGradient { name: String },

    #[error("unknown parameter `{name}`")]
    UnknownParameter { name: String },

    #[error("parameter `{name}` registered twice")]
    DuplicateParameter { name: String },

    #[error("class {id} does not occur in the labels")]
    MissingClass { id: usize },

    #[error("AUC undefined for class {class}: needs at least one positive and one negative")]
    DegenerateAuc { class: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid bag `{id}`: {reason}")]
    InvalidBag { id: String, reason: String },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("truncated file {path}: expected {expected} bytes, file ends at byte {offset}")]
    TruncatedFile {
        path: PathBuf,
        offset: u64,
        expected: u64,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FocusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FocusError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        FocusError::Config(msg.into())
    }
}
