use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("parameter `{name}` = {value} out of range ({constraint})")]
    OutOfRange {
        name: &'static str,
        value: String,
        constraint: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("config: {0}")]
    Config(String),
}

/// Distinct failure modes of the tensor and label file readers/writers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("not an NPY file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),
    #[error("fortran-order arrays are not supported")]
    FortranOrder,
    #[error("expected a rank-{expected} array, found shape {found:?}")]
    Rank { expected: usize, found: Vec<usize> },
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("label {label} exceeds the {format} capacity of {capacity}")]
    Capacity {
        label: usize,
        capacity: usize,
        format: &'static str,
    },
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

impl Error {
    pub(crate) fn out_of_range(
        name: &'static str,
        value: impl ToString,
        constraint: &'static str,
    ) -> Self {
        Error::OutOfRange {
            name,
            value: value.to_string(),
            constraint,
        }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
