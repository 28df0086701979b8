use thiserror::Error;

/// Errors produced by the simulation, estimation and localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid clock: drift must be positive, got {0}")]
    InvalidClock(f64),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("identical anchor ids in pair ({0}, {0})")]
    IdenticalAnchors(usize),

    #[error("no record for anchor {anchor} in frame {frame}")]
    MissingRecord { anchor: usize, frame: usize },

    #[error("{available} frames available, {required} required")]
    InsufficientFrames { available: usize, required: usize },

    #[error(
        "ill-posed system: whitened coefficient matrix has condition number {condition:.3e}; \
         same-frame differencing produces a rank-deficient system, use the successive scheme"
    )]
    IllPosed { condition: f64 },

    #[error("noise covariance is not positive definite")]
    InvalidCovariance,

    #[error("inconsistent reference anchor: expected {expected}, got {got}")]
    InconsistentReference { expected: usize, got: usize },

    #[error("{got} anchors given, at least {required} required for dimension {dimension}")]
    TooFewAnchors {
        got: usize,
        required: usize,
        dimension: usize,
    },

    #[error("degenerate anchor geometry: normal matrix is singular")]
    DegenerateGeometry,

    #[error("repeated query times make the basis rank-deficient")]
    RepeatedTimes,

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
