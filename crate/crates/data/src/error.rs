use std::fmt;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    /// A manifest line that is not a valid record.
    Parse {
        line: usize,
        message: String,
    },
    UnknownLabel {
        line: usize,
        value: String,
    },
    DuplicateId {
        line: usize,
        id: String,
    },
    /// Image file does not start with the P6 magic.
    BadMagic {
        found: String,
    },
    BadHeader(String),
    UnsupportedMaxval(u32),
    TruncatedPixelData {
        expected: usize,
        found: usize,
    },
    InsufficientSamples {
        requested: usize,
        available: usize,
    },
    EmptyDataset,
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "{e}"),
            DataError::Parse { line, message } => write!(f, "manifest line {line}: {message}"),
            DataError::UnknownLabel { line, value } => write!(
                f,
                "manifest line {line}: unknown label {value:?} (expected positive, negative, or neutral)"
            ),
            DataError::DuplicateId { line, id } => {
                write!(f, "manifest line {line}: duplicate id {id:?}")
            }
            DataError::BadMagic { found } => {
                write!(f, "not a binary PPM: expected magic \"P6\", found {found:?}")
            }
            DataError::BadHeader(msg) => write!(f, "bad PPM header: {msg}"),
            DataError::UnsupportedMaxval(v) => {
                write!(f, "unsupported PPM maxval {v} (only 255 is supported)")
            }
            DataError::TruncatedPixelData { expected, found } => {
                write!(f, "truncated PPM pixel data: expected {expected} bytes, found {found}")
            }
            DataError::InsufficientSamples { requested, available } => {
                write!(f, "split needs {requested} samples but only {available} are available")
            }
            DataError::EmptyDataset => write!(f, "dataset is empty"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}
