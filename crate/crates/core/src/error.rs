use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown relation `{name}` at line {line}")]
    UnknownRelation { name: String, line: usize },

    #[error("relation `{name}` does not connect {head} -> {tail} (line {line})")]
    KindMismatch {
        name: String,
        head: String,
        tail: String,
        line: usize,
    },

    #[error(
        "line {line}: drug-drug synergy relation `{name}` is not allowed in the knowledge graph"
    )]
    SynergyRelation { name: String, line: usize },

    #[error("entity `{id}` declared as {first} and later as {second}")]
    EntityKindConflict {
        id: String,
        first: String,
        second: String,
    },

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("no negative samples available: {0}")]
    NoNegatives(String),

    #[error("{0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

/// Write a file, creating missing parent directories.
pub(crate) fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
