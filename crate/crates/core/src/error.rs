use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: r0 = {r0} is not an integer multiple of delta = T/n = {delta}")]
    GridMismatch { r0: f64, delta: f64 },

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("argument {value} outside the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported coupling: ensembles have {left} and {right} particles")]
    UnsupportedCoupling { left: usize, right: usize },

    #[error("near-singular diffusion: condition number of sigma sigma^T is {condition:e}")]
    NearSingularDiffusion { condition: f64 },

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("singular design: det = {det:e}, A1*A5 = {scale:e}")]
    SingularDesign { det: f64, scale: f64 },

    #[error("information matrix is not invertible (eigenvalues {min_eig:e}, {max_eig:e})")]
    NonIdentifiable { min_eig: f64, max_eig: f64 },

    #[error("config error at line {line}, key `{key}`: {reason}")]
    Config { line: usize, key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GridMismatch { .. }
            | Error::InvalidParameter { .. }
            | Error::Config { .. }
            | Error::Domain { .. }
            | Error::Shape(_)
            | Error::UnsupportedCoupling { .. } => 2,
            Error::NearSingularDiffusion { .. }
            | Error::Divergence { .. }
            | Error::EstimationFailed(_)
            | Error::SingularDesign { .. }
            | Error::NonIdentifiable { .. }
            | Error::IndexOutOfRange { .. } => 3,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
