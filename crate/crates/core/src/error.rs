use thiserror::Error;

/// Errors raised by the simulator, environments and learners.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("network solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian in network solve")]
    SingularJacobian,

    #[error("simulation failed at t = {time:.3} s: {source}")]
    SimulationFailure {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown or out-of-service branch `{0}`")]
    UnknownBranch(String),

    #[error("no pre-disturbance equilibrium exists: {0}")]
    InfeasibleInitialCondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid does not cover the required range: {0}")]
    GridCoverage(String),

    #[error("training aborted: {0}")]
    TrainingAbort(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
