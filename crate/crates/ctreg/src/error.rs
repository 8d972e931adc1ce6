//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A sampling coordinate contained NaN or infinity.
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    /// Two volumes or fields that must share a grid do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A label id outside the segmentation's class range.
    #[error("unknown label: {0}")]
    UnknownLabel(String),

    /// A volume with fewer than two distinct values where a range is required.
    #[error("degenerate volume: {0}")]
    DegenerateVolume(String),

    /// A value outside its documented domain.
    #[error("value out of range: {0}")]
    OutOfRange(String),

    /// A parameter violating its constraints.
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    /// Requested more labels than the universe contains.
    #[error("not enough labels: {0}")]
    NotEnoughLabels(String),

    /// A label empty in a mask where a centroid is needed.
    #[error("empty label: {0}")]
    EmptyLabel(String),

    /// A statistical sample with zero variance.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// An empty voxel mask where at least one voxel is required.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// A file that fails structural validation (magic, header, truncation).
    #[error("malformed file: {0}")]
    MalformedFile(String),

    /// A well-formed file using a datatype this reader does not support.
    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),

    /// An orientation matrix with rotation; only axis-aligned grids are supported.
    #[error("unsupported orientation: {0}")]
    UnsupportedOrientation(String),

    /// Failure writing an output file.
    #[error("write error: {0}")]
    WriteError(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Re-wrap the same variant with a context prefix on its message.
    pub fn prefix(self, ctx: &str) -> Error {
        use Error::*;
        match self {
            InvalidCoordinate(m) => InvalidCoordinate(format!("{ctx}: {m}")),
            ShapeMismatch(m) => ShapeMismatch(format!("{ctx}: {m}")),
            UnknownLabel(m) => UnknownLabel(format!("{ctx}: {m}")),
            DegenerateVolume(m) => DegenerateVolume(format!("{ctx}: {m}")),
            OutOfRange(m) => OutOfRange(format!("{ctx}: {m}")),
            InvalidParams(m) => InvalidParams(format!("{ctx}: {m}")),
            NotEnoughLabels(m) => NotEnoughLabels(format!("{ctx}: {m}")),
            EmptyLabel(m) => EmptyLabel(format!("{ctx}: {m}")),
            DegenerateSample(m) => DegenerateSample(format!("{ctx}: {m}")),
            EmptyMask(m) => EmptyMask(format!("{ctx}: {m}")),
            MalformedFile(m) => MalformedFile(format!("{ctx}: {m}")),
            UnsupportedDatatype(m) => UnsupportedDatatype(format!("{ctx}: {m}")),
            UnsupportedOrientation(m) => UnsupportedOrientation(format!("{ctx}: {m}")),
            WriteError(m) => WriteError(format!("{ctx}: {m}")),
            Io(e) => WriteError(format!("{ctx}: {e}")),
        }
    }
}
