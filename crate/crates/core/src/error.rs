use thiserror::Error;

/// Crate-wide error type. The CLI maps each variant to a stable process
/// exit code, so pipeline code should pick variants by failure class, not
/// by callsite convenience.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad key, bad value, unknown
    /// variant or transform name, unsatisfiable scene spec).
    #[error("config error: {0}")]
    Config(String),
    /// Numerical fault during optimization (NaN/Inf loss or parameters).
    #[error("training fault: {0}")]
    TrainingFault(String),
    /// A required input artifact is absent (dataset dir, checkpoint,
    /// checkpoint parameter group).
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl Error {
    /// Process exit code contract: 0 success, 2 config, 3 training fault,
    /// 4 missing input, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::TrainingFault(_) => 3,
            Error::MissingInput(_) => 4,
            Error::Io(_) | Error::Other(_) => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Other(format!("json: {e}"))
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Other(format!("image: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
