use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// The variants map one-to-one onto the CLI exit codes, so callers can
/// classify a failure without string matching.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent shapes or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value that should be finite was NaN or infinite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The caller asked for something the operation does not support.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data (images, dataset directories) is missing or unusable.
    #[error("data error: {0}")]
    Data(String),

    /// A requested output scale exceeds what the model can produce.
    #[error("scale {requested} exceeds the model's maximum scale {max}")]
    ScaleOverflow { requested: String, max: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A checkpoint or image file that could not be decoded.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
