use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("quadrature order {0} out of range (1..=256)")]
    QuadratureOrder(usize),

    #[error("covariance is not positive semidefinite: a={a}, b={b}, c={c}")]
    NotPsd { a: f64, b: f64, c: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("width must be even (symmetric initialization), got m={0}")]
    OddWidth(usize),

    #[error("invalid covariance: {0}")]
    Covariance(String),

    #[error("filter size q={q} exceeds input dimension d={d}")]
    FilterTooLarge { q: usize, d: usize },

    #[error("input is not on the hypercube: entry ({row}, {col}) = {value}")]
    NotHypercube { row: usize, col: usize, value: f64 },

    #[error("training diverged at step {step}: loss {loss} (initial {initial})")]
    Diverged {
        step: usize,
        loss: f64,
        initial: f64,
    },

    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("expected-kernel quadrature is capped at n <= {cap}, got n={n}")]
    TooLarge { n: usize, cap: usize },

    #[error("log-log fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("log-log fit needs positive values, got {0} at index {1}")]
    NonPositive(f64, usize),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("residual decomposition needs n_test > d (n_test={n}, d={d})")]
    EmptyComplement { n: usize, d: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: label {value} outside [-1, 1]")]
    LabelRange {
        path: PathBuf,
        line: usize,
        value: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
