use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    /// Cholesky failed even after the largest admissible jitter.
    #[error("cholesky factorization failed (last jitter tried: {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("hyperparameter training failed: {0}")]
    Training(String),

    #[error("propagation method `{method}` is not supported for model `{model}`")]
    Capability { method: String, model: String },

    #[error("state became non-finite at step {step}")]
    Divergence { step: usize },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
