use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("point {point} outside basis domain [{lo}, {hi}]")]
    Domain { point: f64, lo: f64, hi: f64 },
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("bad data: {0}")]
    Data(String),
    #[error("incomplete data: {0}")]
    IncompleteData(String),
    #[error("penalized normal equations are singular: {0}")]
    Rank(String),
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("column `{0}` has no observed values to impute from")]
    Unimputable(String),
    #[error("incompatible fits: {0}")]
    Incompatible(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
            Error::InvalidGrid(_)
            | Error::Dimension(_)
            | Error::Domain { .. }
            | Error::InvalidBasis(_)
            | Error::Spec(_)
            | Error::UnknownTerm(_)
            | Error::UnknownVariable(_)
            | Error::Incompatible(_) => "spec",
            Error::InsufficientData(_)
            | Error::Data(_)
            | Error::IncompleteData(_)
            | Error::Unimputable(_) => "data",
            Error::Rank(_) => "numeric",
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
