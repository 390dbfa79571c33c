use std::fmt;

use mmfs_core::TensorError;

use crate::fusion::FusionKind;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug)]
pub enum ModelError {
    Tensor(TensorError),
    EmptyCorpus,
    /// MLM masking found nothing it is allowed to corrupt.
    NoMaskableTokens,
    /// A fusion forward was handed the wrong encodings for its kind.
    KindMismatch {
        kind: FusionKind,
        missing: &'static str,
    },
    Io(std::io::Error),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::EmptyCorpus => write!(f, "cannot build a vocabulary from an empty corpus"),
            ModelError::NoMaskableTokens => {
                write!(f, "sequence contains no tokens eligible for masking")
            }
            ModelError::KindMismatch { kind, missing } => {
                write!(f, "fusion kind {kind:?} requires a {missing} encoding")
            }
            ModelError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e)
    }
}
