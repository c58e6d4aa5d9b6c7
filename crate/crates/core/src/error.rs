use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two measures (or a measure and a function) live on different maturity grids.
    #[error("incompatible maturity grids: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    /// A shift or time value is not an integer multiple of the grid cell width.
    #[error("{what} = {value} is not aligned to the grid (cell_width = {cell_width})")]
    Misaligned {
        what: &'static str,
        value: f64,
        cell_width: f64,
    },

    /// Array or operator dimensions do not match.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A pairing function has no point value at an atom location.
    #[error("function has no point value at atom location {location}")]
    MissingPointValue { location: f64 },

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context} at step {step}, path {path}")]
    NonFinite {
        context: &'static str,
        step: usize,
        path: usize,
    },

    /// Invalid argument or configuration value.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for CLI reporting: 1 = input error, 3 = numerical blow-up.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 3,
            _ => 1,
        }
    }
}
