use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumgradError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite gradient in parameter `{0}`; update aborted")]
    NonFiniteGradient(String),

    #[error("checkpoint: {msg} (at byte offset {offset})")]
    Checkpoint { offset: usize, msg: String },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NumgradError> = std::result::Result<T, E>;
