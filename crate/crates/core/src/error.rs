use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is numerically rank deficient (pivot {pivot} has norm {norm:e})")]
    RankDeficient { pivot: usize, norm: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("columns are not orthonormal (max |W^T W - I| = {error:e})")]
    NotOrthonormal { error: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite ODE state at step {step}")]
    NonFiniteState { step: usize },

    #[error(
        "perturbation bound inapplicable: ||C_hat - C|| = {deviation:e} >= lambda_R = {lambda_r:e}"
    )]
    BoundInapplicable { deviation: f64, lambda_r: f64 },

    #[error("batch too small: need at least {needed} samples, got {got}")]
    BatchTooSmall { needed: usize, got: usize },

    #[error("incomplete data: {0}")]
    IncompleteData(String),

    #[error("invalid prior: {0}")]
    PriorInvalid(String),

    #[error("Cholesky factorization failed at pivot {pivot}")]
    CholeskyFailure { pivot: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("invalid file contents: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error comes from a numerical abort rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NonFinite(_)
                | Error::NonFiniteLoss { .. }
                | Error::NonFiniteState { .. }
                | Error::CholeskyFailure { .. }
                | Error::BoundInapplicable { .. }
        )
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
