use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("degenerate input in {what}: row {row} has zero norm")]
    ZeroNorm { what: &'static str, row: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("finite-difference probe produced a non-finite value at coordinate {index}")]
    Probe { index: usize },

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Checkpoint(#[from] crate::training::checkpoint::CheckpointError),

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }
}
