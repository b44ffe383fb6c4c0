use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EcfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EcfError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at {context} (flat index {index})")]
    NonFinite { context: String, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("spectrum violates conjugate symmetry: max deviation {deviation:e} at flat index {index}")]
    SymmetryViolation { deviation: f64, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver aborted at step {step}: {reason}")]
    SolverAbort { step: usize, reason: String },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<EcfError>,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("rollout aborted at step {step}: {reason}")]
    RolloutAbort { step: usize, reason: String },

    #[error("format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("conservation audit failed: {0}")]
    AuditFailed(String),
}

impl EcfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EcfError::Io { path: path.into(), source }
    }

    pub(crate) fn in_sample(self, index: usize) -> Self {
        EcfError::Sample { index, source: Box::new(self) }
    }

    /// Short machine-readable tag for CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            EcfError::InvalidGrid(_) => "invalid_grid",
            EcfError::NonFinite { .. } => "non_finite",
            EcfError::ShapeMismatch(_) => "shape_mismatch",
            EcfError::SymmetryViolation { .. } => "symmetry_violation",
            EcfError::InvalidArgument(_) => "invalid_argument",
            EcfError::SolverAbort { .. } => "solver_abort",
            EcfError::Sample { source, .. } => source.kind(),
            EcfError::Diverged { .. } => "diverged",
            EcfError::RolloutAbort { .. } => "rollout_abort",
            EcfError::Format(_) => "format",
            EcfError::Io { .. } => "io",
            EcfError::Config(_) => "config",
            EcfError::AuditFailed(_) => "audit_failed",
        }
    }
}
