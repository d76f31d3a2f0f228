use std::path::PathBuf;

/// Failures of the file-level front end, each tied to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("frame {frame}: {message}")]
    Dimension { frame: String, message: String },
    #[error("ground truth is empty")]
    EmptyGroundTruth,
}

impl Error {
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Dimension { .. } => 4,
            Error::EmptyGroundTruth => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl From<crate::simulator::ConfigInvalid> for Error {
    fn from(e: crate::simulator::ConfigInvalid) -> Self {
        Error::Config(e.0)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
