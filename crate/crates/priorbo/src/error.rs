use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("parameter `{param}`: value {value} outside declared bounds/values")]
    OutOfBounds { param: String, value: String },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("prior scale cache not initialized; call init_scale(space) first")]
    ScaleNotInitialized,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("surrogate fit: {0}")]
    SurrogateFit(String),
    #[error("need at least {need} feasible observations, have {have}")]
    NotEnoughData { need: usize, have: usize },
    #[error("empty trial history")]
    EmptyHistory,
    #[error("pmf sums to {0}, not 1 within 1e-9")]
    PmfNotNormalized(f64),
    #[error("diagnostics grids support 1D/2D spaces only, got {0}D")]
    UnsupportedDimension(usize),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("objective process failed: {0}")]
    ObjectiveProcess(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error at line {line}, column {column}: {msg}")]
    Json {
        line: usize,
        column: usize,
        msg: String,
    },
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
