use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the distinct failure classes the
/// CLI reports with separate exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed configuration or bank content. `detail` carries the
    /// aggregated messages, one per line.
    #[error("config error in {origin}: {detail}")]
    Config { origin: String, detail: String },

    /// Corpus file violates the record format at a specific line (1-based).
    #[error("corpus error at {path}:{line}: {detail}")]
    Corpus {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    /// Tensor or model dimension mismatch.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    /// A domain invariant was violated at runtime.
    #[error("{0}")]
    Invariant(String),

    /// Checkpoint file is unreadable or from an incompatible version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(origin: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            origin: origin.into(),
            detail: detail.into(),
        }
    }

    pub fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            op: op.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
