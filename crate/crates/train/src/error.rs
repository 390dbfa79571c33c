use std::fmt;

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug)]
pub enum TrainError {
    Tensor(mmfs_core::TensorError),
    Model(mmfs_models::ModelError),
    Data(mmfs_data::DataError),
    Io(std::io::Error),
    EmptySplit(&'static str),
    /// Training aborted: the loss left the reals at this optimizer step.
    NonFiniteLoss {
        step: usize,
    },
    EmptyMatrix,
    BadMagic,
    VersionMismatch {
        found: u32,
    },
    TensorCountMismatch {
        expected: u64,
        found: u64,
    },
    /// Checkpoint tensor does not fit the model being restored.
    StateMismatch(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Data(e) => write!(f, "{e}"),
            TrainError::Io(e) => write!(f, "{e}"),
            TrainError::EmptySplit(which) => write!(f, "the {which} split is empty"),
            TrainError::NonFiniteLoss { step } => {
                write!(f, "non-finite loss at optimizer step {step}; aborting")
            }
            TrainError::EmptyMatrix => write!(f, "confusion matrix has no observations"),
            TrainError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            TrainError::VersionMismatch { found } => {
                write!(f, "unsupported checkpoint version {found}")
            }
            TrainError::TensorCountMismatch { expected, found } => {
                write!(f, "checkpoint holds {found} tensors, expected {expected}")
            }
            TrainError::StateMismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<mmfs_core::TensorError> for TrainError {
    fn from(e: mmfs_core::TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<mmfs_models::ModelError> for TrainError {
    fn from(e: mmfs_models::ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<mmfs_data::DataError> for TrainError {
    fn from(e: mmfs_data::DataError) -> Self {
        TrainError::Data(e)
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}
