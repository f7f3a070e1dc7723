use crate::colorimetry::SkinType;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask selects no pixels ({0})")]
    EmptyMask(&'static str),

    #[error("spherical-harmonic channel {0} has zero norm; direction undefined")]
    ZeroNormChannel(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("obj parse error at line {line}: {reason}")]
    ObjParse { line: usize, reason: String },

    #[error("albedo source misses skin type(s) {missing:?}; per-type subject counts {counts:?}")]
    SkinTypeCoverage {
        missing: Vec<SkinType>,
        counts: [usize; 6],
    },

    #[error("non-finite loss at iteration {iter}; fit aborted ({detail})")]
    NonFiniteLoss { iter: usize, detail: String },
}

impl Error {
    pub fn shape(context: impl Into<String>) -> Self {
        Error::ShapeMismatch(context.into())
    }

    pub fn invalid(context: impl Into<String>) -> Self {
        Error::InvalidInput(context.into())
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
