use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration document failed to parse or validate. `pointer` is a
    /// JSON pointer (RFC 6901) to the offending value.
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("unsupported stroke plan version {0}")]
    UnsupportedVersion(u64),

    #[error("malformed stroke plan: {0}")]
    MalformedPlan(String),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("malformed extractor weights: {0}")]
    MalformedWeights(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
