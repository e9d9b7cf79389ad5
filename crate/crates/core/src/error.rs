use std::path::PathBuf;

/// Errors surfaced by any layer of the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    ParseTriple {
        path: PathBuf,
        line: usize,
        found: usize,
    },

    #[error("unknown token {token:?} under frozen vocabulary ({path}:{line})")]
    UnknownToken {
        token: String,
        path: PathBuf,
        line: usize,
    },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("state error: {0}")]
    State(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint incompatible: {0}")]
    Compatibility(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("evaluating {query}: {source}")]
    Eval {
        query: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
