use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("degenerate row {row}: every entry is masked")]
    DegenerateRow { row: usize },
    #[error("parameter domain error: {0}")]
    ParameterDomain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("temporal order error: query time {t} precedes anchor time {anchor}")]
    TemporalOrder { t: f64, anchor: f64 },
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error("stationarity error: alpha {alpha} must be below beta {beta}")]
    Stationarity { alpha: f64, beta: f64 },
    #[error("training diverged at epoch {epoch}, batch {batch}: {diagnostics}")]
    Diverged {
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
