use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("polygon is not convex at vertex {index}")]
    NonConvex { index: usize },
    #[error("degenerate shape: {0}")]
    Degenerate(String),
    #[error("x' = {x} lies outside the projection [{lo}, {hi}]")]
    OutOfProjection { x: f64, lo: f64, hi: f64 },
    #[error("degenerate interval [{a}, {b}]")]
    DegenerateInterval { a: f64, b: f64 },
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("negative grid value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("support touches the grid boundary")]
    SupportAtBoundary,
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("fixed-point iteration stagnated after {iterations} iterations (change {change:.3e})")]
    Stagnation {
        iterations: usize,
        change: f64,
        history: Vec<f64>,
    },
    #[error("boundary fit at sample {sample} has only {points} points")]
    TooFewFitPoints { sample: usize, points: usize },
    #[error("deformation step too large: t·Lip(X) = {0:.3} is not below 1")]
    StepTooLarge(f64),
    #[error("missing trace samples: expected {expected}, got {got}")]
    MissingTrace { expected: usize, got: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
