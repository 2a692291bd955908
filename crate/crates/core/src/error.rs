use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dump has no [{0}] section")]
    MissingSection(String),

    #[error("malformed [HEADER]: {0}")]
    MalformedHeader(String),

    #[error("call stack has no valid frames{}", context(.0))]
    EmptyStack(Option<String>),

    #[error("{}:{line}: bad SET_COMPONENT directive: {message}", file.display())]
    ManifestSyntax {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("stop-word corpus is empty")]
    EmptyCorpus,

    #[error("cannot compare occurrences of different components ({0} vs {1})")]
    ComponentMismatch(String, String),

    #[error("degenerate labeled set: {0}")]
    DegenerateSet(String),

    #[error("no dump with id {0}")]
    UnknownDump(String),

    #[error("dump id {0} is already in the store")]
    DuplicateDumpId(String),

    #[error("bug store write failed: {0}")]
    StoreWrite(String),

    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn context(dump_id: &Option<String>) -> String {
    match dump_id {
        Some(id) => format!(" (dump {id})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
