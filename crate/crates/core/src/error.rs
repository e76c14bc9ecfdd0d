use thiserror::Error;

pub type Result<T> = std::result::Result<T, LusError>;

#[derive(Debug, Error)]
pub enum LusError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("experiment quality gate: {excluded} of {reps} replications degenerate (first: {first})")]
    QualityGate {
        excluded: usize,
        reps: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl LusError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LusError::InvalidArgument(msg.into())
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(LusError::DimensionMismatch {
                what,
                expected,
                got,
            })
        }
    }
}
