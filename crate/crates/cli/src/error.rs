use std::fmt;
use std::path::{Path, PathBuf};

/// Exit codes: 0 success, 1 validation or usage, 2 I/O, 3 non-convergence.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(flowseg_core::Error),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(flowseg_core::Error::Io { .. } | flowseg_core::Error::Format { .. }) => {
                2
            }
            CliError::Core(_) => 1,
            CliError::Io { .. } => 2,
            CliError::NotConverged(_) => 3,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::NotConverged(m) => write!(f, "{m}"),
        }
    }
}

impl From<flowseg_core::Error> for CliError {
    fn from(e: flowseg_core::Error) -> Self {
        CliError::Core(e)
    }
}
