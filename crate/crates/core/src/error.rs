use crate::domain::{ImageId, Region, Shape};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("region {region:?} does not fit inside image shape {shape:?}")]
    OutOfBounds { region: Region, shape: Shape },
    #[error("region {0:?} overlaps an annotated region of the same image")]
    Overlap(Region),
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("selection pool is empty")]
    EmptyPool,
    #[error("class probabilities are required but the prediction carries only max-probabilities")]
    MissingProbabilities,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cannot train on an empty annotation set")]
    EmptyAnnotations,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tensor format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
