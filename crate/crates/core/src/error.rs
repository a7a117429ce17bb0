use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MaestroError>;

#[derive(Debug, Error)]
pub enum MaestroError {
    /// A caller broke an operation's precondition (shape, range, arity).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared where finite values are required.
    #[error("numeric fault in {op}: {detail}")]
    Numeric { op: String, detail: String },

    /// Dataset, manifest or checkpoint content is malformed.
    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MaestroError {
    pub fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
