//! Error type shared by every tensor operation.

use std::fmt;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Incompatible operand shapes. Carries both shapes so the message is
    /// diagnosable without a debugger.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    AxisOutOfRange {
        axis: usize,
        rank: usize,
    },
    EmptyInput {
        op: &'static str,
    },
    IndexOutOfRange {
        index: i64,
        bound: usize,
    },
    InvalidProbability(f64),
    /// A query row in masked attention has no unmasked key to attend to.
    AllKeysMasked {
        batch: usize,
    },
    /// Batch-norm training mode needs at least two elements per channel.
    DegenerateBatch,
    KernelTooLarge {
        kernel: (usize, usize),
        padded: (usize, usize),
    },
    NotScalar {
        shape: Vec<usize>,
    },
    /// Backward was asked to start from a tensor that is not on any tape.
    DetachedTensor,
    /// The tape has already run backward; it does not support second-order use.
    TapeConsumed,
    MissingGrad {
        name: String,
    },
    NonFiniteOutput {
        op: &'static str,
    },
    EmptyClassAxis,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            TensorError::AxisOutOfRange { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            TensorError::EmptyInput { op } => write!(f, "{op}: empty input"),
            TensorError::IndexOutOfRange { index, bound } => {
                write!(f, "index {index} out of range (bound {bound})")
            }
            TensorError::InvalidProbability(p) => {
                write!(f, "invalid probability {p}; expected 0 <= p < 1")
            }
            TensorError::AllKeysMasked { batch } => {
                write!(f, "attention: every key is masked for batch row {batch}")
            }
            TensorError::DegenerateBatch => {
                write!(f, "batch norm in training mode needs at least 2 values per channel")
            }
            TensorError::KernelTooLarge { kernel, padded } => write!(
                f,
                "conv kernel {}x{} larger than padded input {}x{}",
                kernel.0, kernel.1, padded.0, padded.1
            ),
            TensorError::NotScalar { shape } => {
                write!(f, "expected a scalar tensor, got shape {shape:?}")
            }
            TensorError::DetachedTensor => write!(f, "tensor is not attached to a gradient tape"),
            TensorError::TapeConsumed => {
                write!(f, "tape already ran backward; second-order use is not supported")
            }
            TensorError::MissingGrad { name } => {
                write!(f, "parameter {name:?} has no gradient; run backward first")
            }
            TensorError::NonFiniteOutput { op } => write!(f, "{op}: non-finite output"),
            TensorError::EmptyClassAxis => write!(f, "class axis is empty"),
        }
    }
}

impl std::error::Error for TensorError {}
