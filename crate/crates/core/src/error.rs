use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("non-finite sample in band {band} at index {index}")]
    NonFiniteSample { band: String, index: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("window ({x0}, {y0}, {w}x{h}) exceeds a {width}x{height} raster")]
    OutOfBounds {
        x0: usize,
        y0: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("unknown band {0:?}")]
    UnknownBand(String),

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid Nyquist gain {0}: must lie strictly inside (0, 1)")]
    InvalidGain(f64),

    #[error("{width}x{height} grid is not divisible by {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("patch size {patch} exceeds the {width}x{height} reference")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
    },

    #[error("need at least 2 examples to split, got {0}")]
    TooFewExamples(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch statistics need at least 2 samples per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("backward pass requested without a cached train-mode forward pass")]
    MissingCache,

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("flag mismatch: {0}")]
    FlagMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("channel mismatch: dataset has {dataset} input channels, model expects {model}")]
    ChannelMismatch { dataset: usize, model: usize },

    #[error("bad tiling: tile {tile} must exceed twice the overlap {overlap}")]
    BadTiling { tile: usize, overlap: usize },

    #[error("degenerate band {0}: zero variance")]
    DegenerateBand(String),

    #[error("window {window} larger than the {width}x{height} image")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },

    #[error("reference band {0} has zero mean")]
    ZeroMeanBand(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
