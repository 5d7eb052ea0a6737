use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not compose.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was called outside its documented domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed IDX file. `offset` is the byte position where parsing failed.
    #[error("{path}: {kind} at byte offset {offset}")]
    Idx {
        path: String,
        kind: IdxErrorKind,
        offset: u64,
    },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxErrorKind {
    BadMagic { expected: u32, found: u32 },
    Truncated { needed: u64, available: u64 },
    CountMismatch { images: u64, labels: u64 },
    BadDimensions(String),
}

impl std::fmt::Display for IdxErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IdxErrorKind::BadMagic { expected, found } => {
                write!(f, "bad magic 0x{found:08x} (expected 0x{expected:08x})")
            }
            IdxErrorKind::Truncated { needed, available } => {
                write!(f, "truncated file: needed {needed} bytes, {available} available")
            }
            IdxErrorKind::CountMismatch { images, labels } => {
                write!(f, "image count {images} does not match label count {labels}")
            }
            IdxErrorKind::BadDimensions(msg) => write!(f, "bad dimensions: {msg}"),
        }
    }
}
