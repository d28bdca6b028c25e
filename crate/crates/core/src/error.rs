use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is not in front of the camera (z = {z})")]
    DegenerateProjection { z: f64 },

    #[error("invalid depth sample at ({u}, {v})")]
    InvalidDepthSample { u: f64, v: f64 },

    #[error("pixel ({u}, {v}) outside a {width}x{height} raster")]
    IndexError {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },

    #[error("rescale from {from_w}x{from_h} to {to_w}x{to_h} changes the aspect ratio")]
    AspectMismatch {
        from_w: u32,
        from_h: u32,
        to_w: u32,
        to_h: u32,
    },

    #[error("dimension error: {0}")]
    DimensionError(String),

    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("field `{field}` has the wrong type: expected {expected}")]
    BadType { field: String, expected: &'static str },

    #[error("invariant violated on `{field}`: {reason}")]
    InvariantViolation { field: String, reason: String },

    #[error("cannot build a report from zero verdicts")]
    EmptyReport,

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("non-finite residuals during optimization")]
    NumericalFailure,

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("no usable views: {0}")]
    NoUsableViews(String),

    #[error("no valid depth samples at any corner")]
    NoValidSamples,

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invariant(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvariantViolation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
