use std::path::PathBuf;

use crate::types::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate class id {0}")]
    DuplicateClass(ClassId),

    #[error("class ids must be dense: expected {expected}, found {found}")]
    NonDenseClassIds { expected: u32, found: u32 },

    #[error("unknown superclass {0:?}")]
    UnknownSuperclass(String),

    #[error("superclass {name:?} has {actual} classes, expected {expected}")]
    SuperclassCountMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("class table needs at least 2 classes, found {0}")]
    TooFewClasses(usize),

    #[error("unknown class id {0}")]
    UnknownClass(ClassId),

    #[error("unknown hierarchy node {0:?}")]
    UnknownNode(String),

    #[error("hierarchy contains a cycle through {0:?}")]
    CyclicHierarchy(String),

    #[error("class wnid {0:?} does not appear in the hierarchy")]
    MissingHierarchyNode(String),

    #[error("duplicate image id {0:?}")]
    DuplicateImage(String),

    #[error("unknown image {0:?}")]
    UnknownImage(String),

    #[error("model {model:?}, image {image:?}: ranked list has {len} entries, need at least {min}")]
    ShortRanking {
        model: String,
        image: String,
        len: usize,
        min: usize,
    },

    #[error("model {model:?}, image {image:?}: class {class} ranked twice")]
    DuplicateRank {
        model: String,
        image: String,
        class: ClassId,
    },

    #[error("label {label}: {available} control images available, need {required}")]
    InsufficientControls {
        label: ClassId,
        available: usize,
        required: usize,
    },

    #[error("label {label}: cannot fill a grid of {grid_size} images")]
    InsufficientImages { label: ClassId, grid_size: usize },

    #[error("potential label pool is empty")]
    EmptyPool,

    #[error("response references unknown task {0:?}")]
    UnknownTask(String),

    #[error("metric undefined: {0}")]
    Undefined(&'static str),

    #[error("images without annotation: {0:?}")]
    Unannotated(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Import(String),

    #[error("{} not found; run {stage} first", path.display())]
    MissingStage { path: PathBuf, stage: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
