use thiserror::Error;

#[derive(Debug, Error)]
pub enum CosmoError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0} is out of bounds")]
    OutOfBounds(String),
    #[error("training diverged at iteration {iteration}: {term} is not finite")]
    Divergence { iteration: usize, term: String },
    #[error("file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] tensorgrad::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, CosmoError>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(CosmoError::Config(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(CosmoError::Shape(msg.into()))
}
