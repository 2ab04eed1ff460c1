use thiserror::Error;

/// Errors raised by mesh construction, assembly, the eigensolver and the optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("subdivision level {requested} exceeds the cap of {cap}")]
    Capacity { requested: usize, cap: usize },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("degenerate geodesic ball: {0}")]
    DegenerateBall(String),

    #[error("degenerate Dirichlet domain: {0}")]
    DegenerateDomain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("triangle {triangle} is degenerate (area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("eigensolver did not converge in {iterations} iterations (worst backward error {worst:e})")]
    NonConvergence {
        iterations: usize,
        worst: f64,
        residuals: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("vector has zero mass norm")]
    ZeroMassNorm,

    #[error("eigenpair {index} is stale (backward error {backward_error:e} above {tolerance:e})")]
    StaleEigenpair {
        index: usize,
        backward_error: f64,
        tolerance: f64,
    },

    #[error("optimizer failed at iteration {iteration}: {source}")]
    Ascent {
        iteration: usize,
        density: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
