use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite state during integration at t = {t}")]
    NonFinite { t: f64 },

    #[error("step size underflow at t = {t} (dt = {dt:e}); problem may be stiff")]
    Stiffness { t: f64, dt: f64 },

    #[error("integration diverged after t = {t}")]
    Divergence { t: f64, last_state: Vec<f64> },

    #[error("degenerate tangent frame at t = {t}")]
    DegenerateFrame { t: f64 },

    #[error("data generation failed for trajectory {index}: {source}")]
    Generation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("timescale estimation failed: {0}")]
    Estimation(String),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("radius calibration failed: {0}")]
    Calibration(String),

    #[error("cover is empty (no center has a neighbor); recalibrate radii")]
    EmptyCover,

    #[error("rollout produced a non-finite state at step {step}")]
    Rollout { step: usize },

    #[error("batch error: {0}")]
    Batch(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("missing clean states in dataset {0}")]
    MissingClean(String),

    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),

    #[error("missing input {path}: {msg}")]
    MissingInput { path: PathBuf, msg: String },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the invocation (bad arguments, configs or
    /// inputs) rather than by a failed computation.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Argument(_)
            | Error::Sequencing(_)
            | Error::MissingClean(_)
            | Error::Exists(_)
            | Error::MissingInput { .. }
            | Error::Format { .. }
            | Error::Json { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
