use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing price for {ticker} on {date}")]
    MissingCell { ticker: String, date: String },

    #[error("non-positive or non-finite price {price} for {ticker} on {date}")]
    NonPositivePrice {
        ticker: String,
        date: String,
        price: f64,
    },

    #[error("dates are not strictly increasing at {date}")]
    NonMonotoneDates { date: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("degenerate GBM spec: {0}")]
    DegenerateSpec(String),

    #[error("invalid window start={start} length={length} for {days} days")]
    InvalidWindow {
        start: usize,
        length: usize,
        days: usize,
    },

    #[error("cardinality k={k} exceeds universe size N={n}")]
    KTooLarge { k: usize, n: usize },

    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),

    #[error("zero variance portfolio return series")]
    ZeroVariance,

    #[error(
        "sampling exhausted: zero variance persisted after {attempts} redraws (k={k}, window start={window_start})"
    )]
    SamplingExhausted {
        k: usize,
        window_start: usize,
        attempts: usize,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid quantile {0}")]
    InvalidQuantile(f64),

    #[error("singular design matrix")]
    SingularDesign,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fits are not comparable: {0}")]
    MismatchedFits(String),

    #[error("series too short: {days} days for period {period}")]
    TooShort { days: usize, period: usize },

    #[error("missing column {0}")]
    MissingColumn(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
