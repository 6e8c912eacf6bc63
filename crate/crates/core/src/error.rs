use thiserror::Error;

pub type Result<T, E = CcrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CcrError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite values reached an optimizer step.
    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("contract violation at stage {stage}: {message}")]
    ContractViolation { stage: usize, message: String },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CcrError {
    /// Short machine-readable category, used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            CcrError::DimensionMismatch { .. } => "dimension",
            CcrError::DegenerateInput(_) => "degenerate",
            CcrError::InvalidArgument(_) => "invalid-argument",
            CcrError::TrainingAborted(_) => "training-aborted",
            CcrError::Protocol(_) => "protocol",
            CcrError::ContractViolation { .. } => "contract",
            CcrError::UnknownId(_) => "unknown-id",
            CcrError::Parse(_) => "parse",
            CcrError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CcrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CcrError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
