use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate projection: transformed depth {depth:e} is too close to zero")]
    DegenerateProjection { depth: f64 },

    #[error("point block {point} is singular after damping")]
    SingularPointBlock { point: usize },

    #[error("virtual point block {virtual_point} is singular after damping")]
    SingularVirtualBlock { virtual_point: usize },

    #[error("matrix is not positive definite{}", cluster.map(|c| format!(" (cluster {c})")).unwrap_or_default())]
    NotPositiveDefinite { cluster: Option<usize> },

    #[error("PCG stalled after {iterations} iterations (relative residual {relative_residual:e})")]
    PcgStalled {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
