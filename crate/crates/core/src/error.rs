//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structure(String),

    #[error("branch {branch} references missing bus {bus}")]
    DanglingBranch { branch: String, bus: String },

    #[error("tripping branch {branch} would island bus(es) {isolated}")]
    Island { branch: String, isolated: String },

    #[error("power flow did not converge in {iterations} iterations (last mismatch {mismatch:.3e})")]
    PowerFlowNonConvergence { iterations: usize, mismatch: f64 },

    #[error("power flow Jacobian singular at iteration {iteration}")]
    PowerFlowSingular { iteration: usize },

    #[error("device `{device}` cannot be initialized: {reason}")]
    DeviceInit { device: String, reason: String },

    #[error("non-finite residual in {variable}")]
    NonFiniteResidual { variable: String },

    #[error("algebraic block numerically singular (1/cond = {inv_cond:.3e})")]
    SingularAlgebraicBlock { inv_cond: f64 },

    #[error("Newton solve stagnated: residual {residual:.3e} after {iterations} iterations")]
    NewtonStagnation { residual: f64, iterations: usize },

    #[error("Newton iteration matrix singular")]
    NewtonSingular,

    #[error("equilibrium solve failed: {0}")]
    EquilibriumSolve(String),

    #[error("state dimensions do not match system layout: {0}")]
    DimensionMismatch(String),

    #[error("point is off the constraint manifold: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    OffManifold { residual: f64, tolerance: f64 },

    #[error("trajectories do not overlap in time")]
    DisjointTimeRanges,

    #[error("case validation failed:\n{}", .0.iter().map(|v| format!("  - {}: {}", v.location, v.message)).collect::<Vec<_>>().join("\n"))]
    CaseValidation(Vec<Violation>),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

/// A single case-file validation failure; parsing collects all of them
/// instead of stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
