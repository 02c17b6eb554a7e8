use thiserror::Error;

/// Errors raised by the homogenization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{phase} is disconnected under periodic wrap")]
    Disconnected { phase: &'static str },

    #[error("empty phase: {phase} has measure {measure}")]
    EmptyPhase { phase: &'static str, measure: f64 },

    #[error("geometry is not grid-exact: {0}")]
    NotGridExact(String),

    #[error("coefficient on cell {cell} is not symmetric positive definite")]
    NotSpd { cell: usize },

    #[error("effective tensor is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    EffectiveNotSpd { min_eigenvalue: f64 },

    #[error("effective tensor asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("period iteration did not converge after {periods} periods (defect {defect:e}, contraction {contraction:.3e})")]
    PeriodNonConvergence {
        periods: usize,
        defect: f64,
        contraction: f64,
    },

    #[error("hypothesis {hypothesis} violated: {detail}")]
    HypothesisViolation {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("state value {value} outside tabulated range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("Picard iteration diverged at t = {time} after {retries} step halvings")]
    PicardDivergence { time: f64, retries: usize },

    #[error("problem size {dofs} dofs exceeds the configured cap {cap}")]
    CostCap { dofs: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
