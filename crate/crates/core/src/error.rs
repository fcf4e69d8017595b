use std::path::PathBuf;

/// Errors raised anywhere in the explanation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input shapes, indices or values violate an operation's precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A descriptor, config or toggle set cannot be honoured.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// The data does not contain what the operation needs.
    #[error("data error: {0}")]
    Data(String),

    /// Every spatial location has already been replaced.
    #[error("all {0} locations have already been replaced")]
    Exhausted(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($arg:tt)*) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::$kind(format!($($arg)*)));
        }
    };
}

pub(crate) use ensure;
