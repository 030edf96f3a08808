use std::path::PathBuf;

/// Errors produced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller supplied an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The input holds no usable data (e.g. no labeled pixels).
    #[error("empty data: {0}")]
    EmptyData(String),

    /// A configuration cannot be satisfied by the data it is applied to.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor, grid or batch dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Decoded data violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A file could not be parsed.
    #[error("parse error in {}: {message}", location.display())]
    Parse { location: PathBuf, message: String },

    /// A binary artifact has the wrong magic or an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Prefixes the message with `context`, keeping the error kind.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Error::Argument(m) => Error::Argument(format!("{context}: {m}")),
            Error::EmptyData(m) => Error::EmptyData(format!("{context}: {m}")),
            Error::Config(m) => Error::Config(format!("{context}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{context}: {m}")),
            Error::Validation(m) => Error::Validation(format!("{context}: {m}")),
            Error::Parse { location, message } => Error::Parse {
                location,
                message: format!("{context}: {message}"),
            },
            Error::Format(m) => Error::Format(format!("{context}: {m}")),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{context}: {e}"))),
        }
    }

    /// True for errors caused by bad input data or artifacts rather than by
    /// the way a command was invoked.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyData(_)
                | Error::Shape(_)
                | Error::Validation(_)
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
