use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell ({col}, {row}) outside {width}x{height} lattice")]
    OutOfBounds {
        col: i64,
        row: i64,
        width: usize,
        height: usize,
    },
    #[error("unknown class label `{name}`; valid labels: {valid}")]
    UnknownLabel { name: String, valid: String },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("inconsistent inputs: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error: 1 validation, 2 format, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Json(_) => 2,
            Error::Io(_) => 3,
            _ => 1,
        }
    }
}
