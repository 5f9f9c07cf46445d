use thiserror::Error;

/// Errors produced by the detection, registration and planning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("STL parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("mesh contains no usable triangles")]
    EmptyMesh,

    #[error("no template point is visible from the requested viewpoint")]
    EmptyTemplate,

    #[error("every viewpoint of the template bank produced an empty template")]
    EmptyBank,

    #[error("no template point projects inside the image")]
    EmptyProjection,

    #[error("query ({x:.3}, {y:.3}) lies outside the valid tensor domain")]
    OutOfBounds { x: f64, y: f64 },

    #[error("no template point is visible in any view")]
    NoVisiblePoints,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not place object after {0} attempts")]
    PlacementFailed(usize),

    #[error("view acquisition failed: {0}")]
    Acquisition(String),

    #[error("unsupported or corrupt file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
