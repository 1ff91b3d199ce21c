use thiserror::Error;

/// Errors produced anywhere in the reconstruction stack.
#[derive(Debug, Error)]
pub enum Error {
    /// An encoded raster violated the declared file format.
    #[error("format error: {0}")]
    Format(String),

    /// A caller-supplied argument violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scalar field contained NaN or an infinity.
    #[error("non-finite value at pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },

    /// Scene generation ran out of retries.
    #[error(
        "scene generation failed after {attempts} attempts: wanted {min}..={max} self-intersections, achieved counts {achieved:?}"
    )]
    Generation {
        attempts: usize,
        min: usize,
        max: usize,
        achieved: Vec<usize>,
    },

    /// Every segment was shorter than the minimum segment length.
    #[error("all {segments} segments were shorter than the minimum of {min_points} points")]
    AllSegmentsDropped { segments: usize, min_points: usize },

    /// Two consecutive spline input points coincide.
    #[error("points {index} and {} coincide", index + 1)]
    CoincidentPoints { index: usize },

    /// The reconstruction produced no usable centerline.
    #[error("no thread detected")]
    NoThreadDetected,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
