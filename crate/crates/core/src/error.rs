use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("discretization failed: {0}")]
    Discretization(String),

    #[error("controller synthesis failed: {0}")]
    Synthesis(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("no steady state: spectral radius {spectral_radius} is not below 1")]
    NoSteadyState { spectral_radius: f64 },

    #[error(
        "dwell-time certificate unavailable: mode {mode} is not mean-square stable (spectral radius {spectral_radius})"
    )]
    CertificateUnavailable { mode: usize, spectral_radius: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
