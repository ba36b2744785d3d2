use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parseable category, used by the CLI on its single error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Range(_) => "range",
            Error::Dimension(_) => "dimension",
            Error::Geometry(_) => "geometry",
            Error::Numerical(_) => "numerical",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
