use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("embedding dimension {z} is below the {min} features of the layout")]
    EmbeddingTooSmall { z: usize, min: usize },
    #[error("geographical neighbour {j} of cell {i} is at distance zero")]
    ZeroDistance { i: usize, j: usize },
    #[error("non-finite loss at {context}")]
    NonFiniteLoss { context: String },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("slot (day {day}, slot {slot}) is outside the corpus")]
    SlotOutOfRange { day: usize, slot: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("unknown parameter tensor `{0}`")]
    UnknownParameter(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
