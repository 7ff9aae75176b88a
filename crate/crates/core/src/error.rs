use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown label {0}")]
    UnknownLabel(String),

    #[error("singularity: |1 - eta*t| = {gap:e} below guard (eta={eta}, t={t})")]
    Singularity { eta: f64, t: f64, gap: f64 },

    #[error("non-finite state at step {step} (t={t}): {context}")]
    NonFinite {
        step: usize,
        t: f64,
        context: &'static str,
    },

    #[error("training diverged at step {step}: loss={loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("did not converge after {iters} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iters: usize, grad_norm: f64 },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable identifier, used for machine-parsable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::UnknownLabel(_) => "unknown-label",
            Error::Singularity { .. } => "singularity",
            Error::NonFinite { .. } => "non-finite",
            Error::Diverged { .. } => "diverged",
            Error::NotConverged { .. } => "not-converged",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::CorruptCheckpoint(_) => "corrupt-checkpoint",
            Error::Io(_) => "io",
        }
    }
}
