use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("index out of bounds: {what} {index} >= {bound}")]
    Bounds {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("association ({feature}, {concept}) {state}")]
    Association {
        feature: usize,
        concept: usize,
        state: &'static str,
    },

    #[error("feedback unavailable: {0}")]
    Feedback(String),

    #[error("all grid points diverged")]
    Diverged,

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
