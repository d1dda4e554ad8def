//! Dense reverse-mode differentiation over rank-2 `f64` tensors, plus the
//! Adam optimizer and the binary checkpoint format.

pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use params::{adam_step, AdamConfig, ParamStore};
pub use tape::{CustomOp, GradMap, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite output from {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("no gradient supplied for parameter {0}")]
    MissingGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
