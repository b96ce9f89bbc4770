use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid config key `{key}`: {reason}")]
    ConfigKey { key: String, reason: String },

    #[error("target class {target} is not active in the output mask")]
    InactiveTarget { target: usize },

    #[error("stale or mismatched forward cache: {0}")]
    Cache(String),

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, needed {needed} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: file size {size} is not a multiple of the record size {record}")]
    RecordMisaligned {
        path: PathBuf,
        size: usize,
        record: usize,
    },

    #[error("label {label} out of range for {class_count} classes")]
    LabelRange { label: usize, class_count: usize },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("sample of class {class} is not part of task {task}")]
    Routing { class: usize, task: usize },

    #[error("index {index} out of range (0..{len})")]
    OutOfRange { index: usize, len: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
