//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, solvers and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transport speed {0} (speeds must be strictly positive)")]
    InvalidSpeed(f64),

    #[error("invalid tolerance {0} (must be nonnegative)")]
    InvalidTolerance(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("pair (A, B) is uncontrollable: controllability rank {rank} < state dimension {dim}")]
    Uncontrollable { rank: usize, dim: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(
        "closed-loop margin violation: sym(E1) eigenvalue bound gives margin {achieved:.6e}, \
         required at least {required:.6e}"
    )]
    MarginViolation { achieved: f64, required: f64 },

    #[error("kernel iteration did not converge after {iterations} sweeps (last delta {delta:.3e})")]
    NonConvergence { iterations: usize, delta: f64 },

    #[error("kernel iteration diverged (non-finite values at sweep {sweep})")]
    Divergence { sweep: usize },

    #[error(
        "anti-damping coefficient of layer {layer} equals sqrt(beta)/sqrt(eta); \
         the boundary ODE coefficients are singular"
    )]
    AntiDampingSingularity { layer: usize },

    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: String, value: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds stability bound {bound:.3e}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("state blow-up (non-finite values) at t = {time:.6}")]
    BlowUp { time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
