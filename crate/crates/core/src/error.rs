use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("stale activation cache: computed for parameter generation {cached}, params are at {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("class {0} has no true samples")]
    UndefinedClass(usize),

    #[error("too few tissue pixels: {found} above the optical-density threshold, need at least {needed}")]
    TooFewTissuePixels { found: usize, needed: usize },

    #[error("degenerate stain input: {0}")]
    DegenerateStain(String),

    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    ///
    /// `0` is success; config problems map to `2`, data problems to `3`,
    /// numerical failures (non-finite values, failed gradient checks) to `4`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}
