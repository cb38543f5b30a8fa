use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("not enough training data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),

    #[error("point projects to infinity")]
    PointAtInfinity,

    #[error("camera center is at infinity")]
    CameraAtInfinity,

    #[error("duplicate point id {0}")]
    DuplicateId(u32),

    #[error("fixed-point iteration did not converge after {0} steps")]
    NonConvergence(usize),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("model {model} was built with {which} {found:#018x}, expected {expected:#018x}")]
    CodecMismatch {
        model: u32,
        which: &'static str,
        found: u64,
        expected: u64,
    },

    #[error("model {0} not found")]
    ModelNotFound(u32),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
