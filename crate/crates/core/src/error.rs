use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("region {x},{y} {width}x{height} out of bounds for {image_width}x{image_height} image")]
    RegionOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        image_width: usize,
        image_height: usize,
    },
    #[error("empty region: histogram needs at least one pixel")]
    EmptyRegion,
    #[error("empty histogram: entropy is undefined for zero pixels")]
    EmptyHistogram,
    #[error("invalid tile spec: {0}")]
    InvalidTileSpec(String),
    #[error("image {width}x{height} is smaller than tile size {size}: no tiles")]
    ImageSmallerThanTile { width: usize, height: usize, size: usize },
    #[error("expected a {expected}-channel image, got {actual} channels")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(f64),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model has no convolutional layer")]
    NoConvLayer,
    #[error("painting {0} is unclassifiable: no tile survived the entropy sieve")]
    Unclassifiable(String),
    #[error("painting {0} has no true label")]
    MissingLabel(String),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("kept tile at {x},{y} carries no probability")]
    MissingProbability { x: usize, y: usize },
    #[error("dimension mismatch: map is {map_width}x{map_height}, source is {source_width}x{source_height}")]
    DimensionMismatch {
        map_width: usize,
        map_height: usize,
        source_width: usize,
        source_height: usize,
    },
    #[error("invalid style: {0}")]
    InvalidStyle(String),
}
