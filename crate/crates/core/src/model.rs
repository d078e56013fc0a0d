//! The common contract every simulated system satisfies.
//!
//! The three engines, the manifold classifier and the diagnostics all work
//! against [`DynamicModel`]; power systems and the bundled toy DAE systems
//! implement it. Residuals are rate-form in seconds: `hc[i]` is `dzc[i]/dt`,
//! `f[i]` is `dx[i]/dt`, and `g` rows are algebraic residuals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dae::{JacobianBundle, ResidualVector};
use crate::error::Result;
use crate::grid::ContingencyEvent;
use crate::state::{PartitionLayout, PartitionedState};

/// What kind of discrete transition fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// A tap moved.
    LtcTap,
    /// LTC delay-timer bookkeeping (arming or resetting); no dynamics change.
    LtcTimer,
    /// An over-excitation limiter switched on.
    OxlActivation,
    /// A scheduled topology change.
    Contingency,
    /// A synthetic model's discrete map fired.
    DiscreteMap,
}

/// One logged discrete event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub description: String,
    pub zd_before: Vec<f64>,
    pub zd_after: Vec<f64>,
    /// State right after the jump (algebraic variables re-solved, or the
    /// manifold re-anchored for constrained runs).
    pub post_state: Option<crate::state::PartitionedState>,
}

/// Result of polling every discrete device at one instant. All devices
/// observe the same pre-event state (simultaneous update semantics).
#[derive(Debug, Clone)]
pub struct DiscreteUpdate {
    pub zd: DVector<f64>,
    /// Any discrete state changed (including pure timer bookkeeping).
    pub changed: bool,
    /// A change affects the continuous equations (tap moved, limiter
    /// switched): integrators must re-anchor and refresh Jacobians.
    pub dynamics_changed: bool,
    pub records: Vec<(EventKind, String)>,
}

impl DiscreteUpdate {
    pub fn unchanged(zd: DVector<f64>) -> Self {
        Self {
            zd,
            changed: false,
            dynamics_changed: false,
            records: Vec::new(),
        }
    }
}

pub trait DynamicModel: Clone {
    fn name(&self) -> &str;
    fn layout(&self) -> &PartitionLayout;
    /// Reciprocal of the maximum device time constant.
    fn epsilon(&self) -> f64;

    /// Evaluate all residual parts at `state`.
    fn residuals(&self, state: &PartitionedState) -> Result<ResidualVector>;

    /// Analytic Jacobian blocks at `state`.
    fn jacobian(&self, state: &PartitionedState) -> Result<JacobianBundle>;

    /// Poll the discrete maps (`h_d`) at slow time `tau`.
    fn discrete_update(&self, state: &PartitionedState, tau: f64) -> DiscreteUpdate;

    /// Apply a scheduled topology event, returning the modified model.
    /// Models without topology reject the event.
    fn apply_contingency_event(&self, event: &ContingencyEvent) -> Result<Self>
    where
        Self: Sized;

    fn g_row_name(&self, row: usize) -> String {
        format!("g[{row}]")
    }
}

/// Poll every discrete device of `model` at the pre-event `state`;
/// the aggregated next `z_d` comes back with one record per transition.
pub fn process_discrete_events<M: DynamicModel>(
    model: &M,
    state: &PartitionedState,
    tau: f64,
) -> DiscreteUpdate {
    model.discrete_update(state, tau)
}
