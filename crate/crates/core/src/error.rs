use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch ({what}): expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal mass {off_diagonal:e}, target {target:e})")]
    NoConvergence {
        sweeps: usize,
        off_diagonal: f64,
        target: f64,
    },

    #[error("eigenvalue {value:e} at index {index} is below the extension tolerance {tolerance:e}")]
    IllPosedExtension {
        index: usize,
        value: f64,
        tolerance: f64,
    },

    #[error("gradient flow integration failed at t = {time}: loss did not decrease after {halvings} step halvings (eta = {eta:e})")]
    FlowIntegration {
        time: f64,
        halvings: usize,
        eta: f64,
    },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
