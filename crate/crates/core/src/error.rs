use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {m} points")]
    IndexOutOfRange { index: usize, m: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Hessian is numerically singular (smallest eigenvalue {lambda:e} < 1e-12)")]
    SingularHessian { lambda: f64 },

    #[error("no reference optimum available for this problem")]
    MissingOptimum,

    #[error("data exhausted after {m} draws; single-shuffle sampling requires at most m draws (T <= m)")]
    SamplerExhausted { m: usize },

    #[error("permutation enumeration limited to m <= {max}, got m = {m}")]
    EnumerationTooLarge { m: usize, max: usize },

    #[error("projection radius {radius} excludes the optimum (norm {wstar_norm})")]
    ProjectionExcludesOptimum { radius: f64, wstar_norm: f64 },

    #[error("non-finite iterate at epoch {epoch:?}, step {step}; try a smaller step size")]
    NonFinite { epoch: Option<usize>, step: usize },

    #[error(
        "suboptimality exceeded the uniform safety bound at epoch {epoch}, step {step}: \
         ln(subopt) = {log_subopt:.3} > {log_bound:.3}; try a smaller step size"
    )]
    SafetyBoundExceeded {
        epoch: usize,
        step: usize,
        log_subopt: f64,
        log_bound: f64,
    },

    #[error(
        "batches exhausted: {available} batches of size {batch} available but {required} epochs \
         requested (the total batch count must be at least the epoch count)"
    )]
    BatchesExhausted {
        available: usize,
        batch: usize,
        required: usize,
    },

    #[error("empty function class")]
    EmptyClass,

    #[error("shifted second-moment matrix is singular (smallest eigenvalue {gamma:e})")]
    SingularShift { gamma: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
