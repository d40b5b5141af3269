//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the tuning pipeline.
#[derive(Debug)]
pub enum Error {
    /// An input matrix or tile contained NaN or infinity.
    NonFiniteInput(&'static str),
    /// A buffer or matrix had the wrong dimensions for the requested call.
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    /// A parameter violated its contract (ib out of range, zero cores, ...).
    InvalidParam(String),
    /// An operation that needs at least one sample received none.
    EmptyDataset(&'static str),
    /// Pruning was asked to judge a candidate it has no measurement for.
    MissingResult { nb: usize, ib: usize, n: usize },
    /// A sweep or ingested result set does not cover the full grid.
    IncompleteCoverage { n: usize, ncores: usize },
    /// Two result sets were compared over different grids.
    GridMismatch(String),
    /// The monotonic timer is unusable (too coarse, or a zero reading).
    Timer(String),
    /// Kernel benchmarks refuse to run while factorization workers are live.
    WorkersLive(usize),
    /// A measured factorization failed its numerical verification.
    NumericallyInvalid { residual: f64 },
    /// A persisted file carries an unsupported format version.
    VersionMismatch { found: u32, supported: u32 },
    /// A text input (CSV) failed to parse; line numbers are 1-based.
    Parse { path: String, line: usize, msg: String },
    /// A checkpoint file does not match the run configuration.
    CheckpointMismatch(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFiniteInput(what) => write!(f, "non-finite value in {what}"),
            Error::ShapeMismatch { what, expected, got } => {
                write!(f, "shape mismatch in {what}: expected {expected}, got {got}")
            }
            Error::InvalidParam(msg) => write!(f, "invalid parameter: {msg}"),
            Error::EmptyDataset(what) => write!(f, "empty dataset: {what}"),
            Error::MissingResult { nb, ib, n } => {
                write!(f, "no measurement for candidate nb={nb} ib={ib} at n={n}")
            }
            Error::IncompleteCoverage { n, ncores } => {
                write!(f, "no result covers grid point (n={n}, ncores={ncores})")
            }
            Error::GridMismatch(msg) => write!(f, "grid mismatch: {msg}"),
            Error::Timer(msg) => write!(f, "timer: {msg}"),
            Error::WorkersLive(count) => {
                write!(f, "refusing to benchmark: {count} factorization worker(s) still live")
            }
            Error::NumericallyInvalid { residual } => {
                write!(f, "factorization numerically invalid: residual {residual:e}")
            }
            Error::VersionMismatch { found, supported } => {
                write!(f, "unsupported format version {found} (this build reads version {supported})")
            }
            Error::Parse { path, line, msg } => write!(f, "{path}:{line}: {msg}"),
            Error::CheckpointMismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
            Error::Io(e) => write!(f, "io: {e}"),
            Error::Json(e) => write!(f, "json: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
