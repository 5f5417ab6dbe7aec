//! Dense tensor arithmetic with taped reverse-mode differentiation.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, CoordCheck, CoordStatus, GradCheckReport};
pub use ops::{argmax_first, cross_entropy, smooth_l1_sum, softmax, Op, OpKind};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Tensor, MAX_RANK};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("invalid shape {0:?}: extents must be positive and rank at most 4")]
    InvalidShape(Vec<usize>),
    #[error("length mismatch: shape needs {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{op}: incompatible shapes ({detail})")]
    Incompatible { op: &'static str, detail: String },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: expected {expected} inputs, got {actual}")]
    Arity {
        op: &'static str,
        expected: &'static str,
        actual: usize,
    },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("{op}: invalid attribute ({detail})")]
    InvalidAttr { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFiniteResult { op: &'static str },
    #[error("node does not belong to this tape")]
    ForeignNode,
    #[error("backward root must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
