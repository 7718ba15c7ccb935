use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("singular point: {0}")]
    SingularPoint(&'static str),
    #[error("divergent integral: {0}")]
    DivergentIntegral(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("grid too small: max radius {max_radius} exceeds grid end {grid_end}")]
    GridTooSmall { max_radius: f64, grid_end: f64 },
    #[error("incompatible clouds: {0}")]
    IncompatibleClouds(String),
    #[error("identity out of scope: {0}")]
    OutOfScope(String),
    #[error("collision: particles {0} and {1} closer than the collision radius")]
    Collision(usize, usize),
    #[error("not converged after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("mass mismatch: extracted {got}, expected {expected}")]
    MassMismatch { got: f64, expected: f64 },
    #[error("mass is not monotone in the obstacle level: m({c_lo}) = {m_lo} > m({c_hi}) = {m_hi}")]
    MassNotMonotone {
        c_lo: f64,
        m_lo: f64,
        c_hi: f64,
        m_hi: f64,
    },
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
