use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward called on a value that does not depend on any differentiable input")]
    Detached,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed image: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("window starting at {start} with length {len} does not fit a video of {frames} frames")]
    WindowRange {
        start: usize,
        len: usize,
        frames: usize,
    },

    #[error("skip window n={start}, T={len}, s={stride} needs frame {last} but the video has {frames}")]
    SkipRange {
        start: usize,
        len: usize,
        stride: usize,
        last: usize,
        frames: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mask of size {width}x{height} centred at ({cx}, {cy}) does not fit a {frame_width}x{frame_height} frame")]
    MaskBounds {
        width: usize,
        height: usize,
        cx: usize,
        cy: usize,
        frame_width: usize,
        frame_height: usize,
    },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch (file truncated or corrupt)")]
    CheckpointChecksum,

    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint does not match model architecture: {0}")]
    ShapeSignature(String),

    #[error("metric: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
