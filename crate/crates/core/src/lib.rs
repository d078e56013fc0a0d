//! Multi-timescale power system dynamics toolkit.
//!
//! Three time-domain engines over one partitioned DAE model:
//!
//! - the **long-term model** integrates slow continuous states, fast states
//!   and algebraic constraints together, with discrete devices (tap changers,
//!   limiters) firing between steps;
//! - the **transient model** freezes the slow states and integrates the fast
//!   subsystem;
//! - the **constrained (QSS) model** replaces the fast dynamics by their
//!   equilibrium equations and steps only the slow states along the
//!   constraint manifold.
//!
//! On top of the engines sit the nonlinear-analysis pieces: classification
//! of constraint-manifold points by the eigenvalues of the algebraic block
//! and its Schur complement, stability-region membership by transient
//! rollout, and a diagnosis pass that explains why a constrained run and a
//! full run disagree.

pub mod dae;
pub mod devices;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod manifold;
pub mod model;
pub mod powerflow;
pub mod sim;
pub mod sparse;
pub mod state;
pub mod synthetic;
pub mod system;

pub use dae::{
    assemble_jacobian, assemble_residuals, finite_difference_jacobian, schur_complement,
    JacobianBundle, ResidualVector,
};
pub use error::{Error, Result};
pub use grid::{apply_contingency, build_admittance, AdmittanceMatrix, Branch, Bus, BusKind, ContingencyEvent, Network};
pub use model::{process_discrete_events, DiscreteUpdate, DynamicModel, EventKind, EventRecord};
pub use powerflow::{solve_power_flow, GenSchedule, PowerFlowSolution};
pub use state::{PartitionLayout, PartitionedState};
pub use system::{initialize_dynamic_state, DeviceSet, GeneratorSpec, LoadSpec, LtcSpec, PowerSystem};
