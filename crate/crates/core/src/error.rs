use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("stability error: dt = {dt:e} exceeds bound {bound:e} ({detail})")]
    Stability { dt: f64, bound: f64, detail: String },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("at t = {t}: {source}")]
    AtTime { t: f64, source: Box<Error> },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub fn at_time(self, t: f64) -> Error {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input rather than failed verification.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Dimension(_)
            | Error::Domain(_)
            | Error::Size(_)
            | Error::Io(_) => true,
            Error::AtTime { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
