use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion norm is below 1e-12")]
    ZeroQuaternion,

    #[error("invalid shape parameters: {0}")]
    InvalidShape(String),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("mesh has zero total surface area")]
    DegenerateMesh,

    #[error("brute-force expectation limited to 20 primitives, got {0}")]
    TooManyPrimitives(usize),

    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("every restart aborted ({0} restarts)")]
    AllRestartsFailed(usize),

    #[error("no primitive reaches the existence threshold")]
    NoActivePrimitives,

    #[error("mesh is not watertight: ray parity disagrees between directions")]
    OpenMesh,

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported ensemble file version {0}")]
    UnsupportedVersion(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
