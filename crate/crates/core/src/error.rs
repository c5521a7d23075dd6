use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor did not have the shape a layer or operation expected.
    #[error("layer {layer} ({kind}): {msg}")]
    Shape {
        layer: usize,
        kind: &'static str,
        msg: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("usage error: {0}")]
    Usage(String),
    /// A loss or activation became NaN/Inf during training.
    #[error("non-finite {term} at step {step}")]
    NonFinite { step: usize, term: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        Error::Png(e.to_string())
    }
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        Error::Png(e.to_string())
    }
}
