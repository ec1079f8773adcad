use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("boundary classification failed: {0}")]
    Classification(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("static condensation failed on element {element}: {reason}")]
    Condensation { element: usize, reason: String },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("smoother construction failed: zero diagonal in row {row}")]
    ZeroDiagonal { row: usize },

    #[error("MinRes did not converge in {iterations} iterations (relative residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("case (rho_s={rho_s}, delta1={delta1}, delta2={delta2}, n={n}): {source}")]
    Case {
        rho_s: f64,
        delta1: f64,
        delta2: f64,
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
