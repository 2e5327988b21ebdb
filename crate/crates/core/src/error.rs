use thiserror::Error;

#[derive(Debug, Error)]
pub enum UniddError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("eigendecomposition did not converge")]
    NoConvergence,
    #[error("unstable filter: alpha * lambda = {0} >= 1")]
    UnstableFilter(f64),
    #[error("singular or ill-conditioned linear system: {0}")]
    SingularSystem(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(usize),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("degenerate batch: need at least 2 samples, got {0}")]
    DegenerateBatch(usize),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UniddError>;

impl UniddError {
    /// True for errors caused by bad input files or configuration rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            UniddError::InvalidConfig(_)
                | UniddError::Format(_)
                | UniddError::ChecksumMismatch { .. }
                | UniddError::Io(_)
        )
    }
}
