use alloc::string::String;

/// Errors produced by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("duplicate frame key ({video_id}, {frame_index})")]
    DuplicateFrame { video_id: String, frame_index: u64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),

    #[error("label out of range: {0}")]
    Label(String),

    #[error("missing parameter {0}")]
    MissingParam(String),

    #[error("frame source: {0}")]
    Frames(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl core::fmt::Display, got: impl core::fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::Shape {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
