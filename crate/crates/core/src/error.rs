use thiserror::Error;

pub type Result<T> = std::result::Result<T, ExecError>;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),

    #[error("period index {index} out of range for {periods} periods")]
    PeriodOutOfRange { index: usize, periods: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("invalid redistribution matrix: {0}")]
    InvalidRedistribution(String),

    #[error("degenerate reference strategy: suffix sum from period {period} is zero")]
    ZeroSuffixSum { period: usize },

    #[error("traded volume {traded} does not match total demand {demand}")]
    VolumeMismatch { traded: f64, demand: f64 },

    #[error("market is not strictly convex: {0}")]
    NotConvex(String),

    #[error("singular KKT system")]
    SingularKkt,

    #[error("active-set iteration did not converge after {0} passes")]
    ActiveSetNonconvergence(usize),

    #[error("empty cost distribution")]
    EmptyDistribution,

    #[error("non-finite cost sample at index {0}")]
    NonFiniteSample(usize),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("malformed scenario file: {0}")]
    MalformedScenarioFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
