use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank deficient: expected rank {expected}, found {found}")]
    RankDeficient { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    Symmetry { asymmetry: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid penalty: {0}")]
    Penalty(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("outside model domain: {0}")]
    ModelDomain(String),

    #[error("verdicts disagree beyond the tolerance band: {0}")]
    Inconsistency(String),

    #[error("parameter estimation failed: {message}")]
    EstimationFailure { message: String, trace: Vec<(f64, f64)> },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by unreadable or malformed input rather than by the
    /// numerics. The CLI maps these to its usage exit code.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Config(_) | Error::Io(_))
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
