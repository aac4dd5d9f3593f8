use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite: pivot {pivot:.3e} at row {index}")]
    NotPsd { pivot: f64, index: usize },

    #[error("matrix is not symmetric: max |a_ij - a_ji| = {deviation:.3e}")]
    NotSymmetric { deviation: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigenvalue iteration did not converge: subdiagonal residual {residual:.3e}")]
    NoConvergence { residual: f64 },

    #[error("matrix exponential overflowed")]
    Overflow,

    #[error("invalid drift specification: {0}")]
    InvalidSpec(String),

    #[error("state became non-finite at reverse step {step}")]
    NonFinite { step: usize },

    #[error("training diverged: non-finite loss at iteration {step}")]
    Diverged { step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 failed check, 2 usage, 3 I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Io(_) => 3,
            _ => 1,
        }
    }
}
