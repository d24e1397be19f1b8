use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("degenerate leg geometry: length {0} is too small")]
    DegenerateGeometry(f64),
    #[error("integrator failed: {0}")]
    Integrator(String),
    #[error("empty point set")]
    EmptyPointSet,
    #[error("conflicting labels at duplicate point {0:?}")]
    ConflictingLabels([f64; 4]),
    #[error("bad network shape: {0}")]
    BadShape(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },
    #[error("network incompatible with planner: {0}")]
    NetMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("unsupported format version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
