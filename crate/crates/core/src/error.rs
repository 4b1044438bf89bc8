use std::fmt;

use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid rate matrix: {0}")]
    InvalidGenerator(String),

    #[error("rate matrix is not irreducible: states {unreachable:?} are not mutually reachable with state 0")]
    NotIrreducible { unreachable: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model validation failed:\n{0}")]
    Validation(ValidationReport),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("simulation aborted: {0}")]
    InvariantBreach(Box<StateDump>),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("finite-difference stencil is not monotone on axis {axis}: {detail}")]
    NonMonotoneStencil { axis: usize, detail: String },

    #[error("centering condition violated: sum_k pi_k delta_k = {sum:e} (scale {scale:e})")]
    Centering { sum: f64, scale: f64 },

    #[error("horizon {horizon} too short: discounted tail bound {tail:e} exceeds {limit:e}")]
    HorizonTooShort { horizon: f64, tail: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Snapshot of the joint chain when a policy output breaks an invariant.
#[derive(Debug, Clone)]
pub struct StateDump {
    pub reason: String,
    pub t: f64,
    pub x: Vec<u64>,
    pub z: Vec<i64>,
    pub q: Vec<i64>,
    pub env: usize,
    pub n: u64,
}

impl fmt::Display for StateDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at t={} (n={}, env={}, x={:?}, z={:?}, q={:?})",
            self.reason, self.t, self.n, self.env, self.x, self.z, self.q
        )
    }
}
