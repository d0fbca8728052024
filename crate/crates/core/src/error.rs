use crate::sst::VoxelCoord4D;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("coordinate {0} is outside the tensor bounds")]
    OutOfBounds(VoxelCoord4D),
    #[error("duplicate coordinate {0}")]
    DuplicateCoord(VoxelCoord4D),
    #[error("feature width {got}, expected {want}")]
    BadFeatureWidth { got: usize, want: usize },
    #[error("non-finite feature value at {0}")]
    NonFiniteFeature(VoxelCoord4D),
    #[error("frame {t} out of range for {frames} frames")]
    FrameOutOfRange { t: usize, frames: usize },
    #[error("animation leaves the unit cube")]
    SpecOutOfCube,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),
    #[error("tensor is not recorded on this tape or has no differentiable inputs")]
    DetachedTensor,
    #[error("embedding dimension {0} is not usable here")]
    BadDim(usize),
    #[error("rotary embedding needs an even dimension, got {0}")]
    OddDim(usize),
    #[error("token width {got}, expected {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("spatial resolution {0} is odd")]
    OddResolution(u32),
    #[error("frame count {0} is odd")]
    OddFrameCount(u32),
    #[error("pack state does not match the packed tensor")]
    StateMismatch,
    #[error("downsample map does not match the coarse tensor")]
    MapMismatch,
    #[error("structure has no active voxels")]
    EmptyStructure,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("need at least two frames")]
    TooFewFrames,
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("malformed {format} data: {detail}")]
    Format {
        format: &'static str,
        detail: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(detail: impl Into<String>) -> Self {
        Error::ShapeMismatch(detail.into())
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
