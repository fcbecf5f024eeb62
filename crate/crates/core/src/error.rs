use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for usage, configuration and file problems,
    /// 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Input(_) | Error::Io { .. } => 2,
            Error::Dimension(_) | Error::Index(_) | Error::Training(_) => 1,
        }
    }

    /// Prefixes the message with a location such as `corpus.txt:12`.
    pub fn at(self, location: impl std::fmt::Display) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{location}: {m}")),
            Error::Index(m) => Error::Index(format!("{location}: {m}")),
            Error::Config(m) => Error::Config(format!("{location}: {m}")),
            Error::Format(m) => Error::Format(format!("{location}: {m}")),
            Error::Input(m) => Error::Input(format!("{location}: {m}")),
            Error::Training(m) => Error::Training(format!("{location}: {m}")),
            io @ Error::Io { .. } => io,
        }
    }
}
