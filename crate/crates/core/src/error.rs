use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame packet: {field}: {reason}")]
    Packet { field: &'static str, reason: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid rigid transform: {0}")]
    Transform(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("duplicate keyframe id {0}")]
    DuplicateKeyframe(u64),

    #[error("unknown keyframe id {0}")]
    UnknownKeyframe(u64),

    #[error("unknown submap id {0}")]
    UnknownSubmap(u64),

    #[error("unknown place id {0}")]
    UnknownPlace(u64),

    #[error("invalid submap batch: {0}")]
    Batch(String),

    #[error("visual memory is empty")]
    EmptyMemory,

    #[error("degenerate point set: {0}")]
    Degenerate(String),

    #[error("too few points: {got} < {min}")]
    TooFewPoints { got: usize, min: usize },

    #[error("unreliable ground: inlier ratio {0:.3}")]
    UnreliableGround(f64),

    #[error("no places")]
    NoPlaces,

    #[error("cannot snap {which} point to a place within {radius} m")]
    Snap { which: &'static str, radius: f64 },

    #[error("no path between places {0} and {1}")]
    NoPath(u64, u64),

    #[error("propagation did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("need at least 2 categories, got {0}")]
    TooFewCategories(usize),

    #[error("mask oracle: {0}")]
    Oracle(String),

    #[error("scene generation: {0}")]
    Scene(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn packet(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Packet {
            field,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
