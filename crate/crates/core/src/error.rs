use std::path::PathBuf;

use crate::geometry::LayerBoundary;
use crate::maskops::ClassLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("boundary {0:?} is not present in the geometry")]
    MissingBoundary(LayerBoundary),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error("incomplete observations: {0}")]
    IncompleteObservations(String),

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("no IoU value supplied for class {0:?}")]
    MissingClass(ClassLabel),

    #[error("radius difference undefined for a zero reference radius")]
    UndefinedDifference,

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("annotation polygons are not nested: {0}")]
    Nesting(String),

    #[error("no threshold separates a constant-intensity region")]
    NoThreshold,

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("input is not square: {0}x{1}")]
    NonSquare(u32, u32),

    #[error("invalid class code {0}")]
    InvalidClassCode(u8),

    #[error("section radius {radius_px:.1} px exceeds the image half-extent {half_extent_px:.1} px")]
    SectionOutOfBounds { radius_px: f64, half_extent_px: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Image { .. })
    }
}
