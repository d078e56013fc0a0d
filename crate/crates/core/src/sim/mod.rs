//! Time-domain engines: the full long-term model, the transient (fast
//! subsystem) model and the constrained quasi-steady-state model, sharing
//! one implicit-trapezoidal Newton core, divergence detection and
//! equilibrium detection.

pub mod constraint;
pub mod long_term;
pub mod newton;
pub mod qss;
pub mod transient;

pub use constraint::{solve_constraint, ConstraintSolution};
pub use long_term::run_long_term;
pub use qss::run_qss;
pub use transient::run_transient;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ContingencyEvent;
use crate::model::{DynamicModel, EventRecord};
use crate::state::PartitionedState;

/// When the step solver refactorizes its iteration matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianRefresh {
    EveryStep,
    /// Refresh after discrete events, and whenever convergence degrades.
    OnEvent,
    /// Refresh only when convergence degrades.
    OnSlowConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Fixed integration step, s.
    pub step: f64,
    /// Newton residual tolerance for accepting a step.
    pub tolerance: f64,
    pub max_newton_iterations: usize,
    /// Simulation horizon, s (model time).
    pub horizon: f64,
    /// Divergence bound on any fast-state magnitude.
    pub state_bound: f64,
    /// Window length for the growing-oscillation detector, s.
    pub oscillation_window: f64,
    /// Growth ratio between consecutive windows that counts as growing.
    pub oscillation_growth: f64,
    /// Amplitude floor below which oscillation growth is ignored.
    pub oscillation_floor: f64,
    /// Step halvings to retry after a Newton failure.
    pub max_step_halvings: usize,
    pub jacobian_refresh: JacobianRefresh,
    /// Equilibrium detector: residual infinity-norm threshold...
    pub sep_tolerance: f64,
    /// ...sustained for this long, s.
    pub sep_dwell: f64,
}

impl IntegratorConfig {
    pub fn long_term() -> Self {
        Self {
            step: 0.05,
            tolerance: 1e-8,
            max_newton_iterations: 20,
            horizon: 200.0,
            state_bound: 1e3,
            oscillation_window: 2.0,
            oscillation_growth: 1.25,
            oscillation_floor: 5e-3,
            max_step_halvings: 4,
            jacobian_refresh: JacobianRefresh::EveryStep,
            sep_tolerance: 1e-6,
            sep_dwell: 10.0,
        }
    }

    pub fn transient() -> Self {
        Self {
            step: 0.002,
            horizon: 30.0,
            ..Self::long_term()
        }
    }

    pub fn qss() -> Self {
        Self {
            jacobian_refresh: JacobianRefresh::OnEvent,
            ..Self::long_term()
        }
    }
}

/// Scheduled (timed) events: contingencies applied at fixed instants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    pub timed: Vec<TimedEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub time: f64,
    pub event: ContingencyEvent,
}

impl EventSchedule {
    pub fn sorted(mut self) -> Self {
        self.timed
            .sort_by(|a, b| a.time.partial_cmp(&b.time).expect("finite event times"));
        self
    }
}

/// Apply every timed event with `time <= t` to a copy of `base`.
pub fn model_at_time<M: DynamicModel>(base: &M, schedule: &EventSchedule, t: f64) -> Result<M> {
    let mut m = base.clone();
    for ev in schedule.timed.iter().filter(|e| e.time <= t) {
        m = m.apply_contingency_event(&ev.event)?;
    }
    Ok(m)
}

/// Why a run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Termination {
    HorizonReached,
    ConvergedToSep { time: f64 },
    Diverged { reason: String, time: f64 },
    NewtonFailure { time: f64 },
    Singularity { time: f64 },
}

impl Termination {
    pub fn is_converged(&self) -> bool {
        matches!(self, Termination::ConvergedToSep { .. })
    }

    pub fn is_failure(&self) -> bool {
        matches!(
            self,
            Termination::Diverged { .. }
                | Termination::NewtonFailure { .. }
                | Termination::Singularity { .. }
        )
    }

    pub fn time(&self) -> Option<f64> {
        match self {
            Termination::HorizonReached => None,
            Termination::ConvergedToSep { time }
            | Termination::Diverged { time, .. }
            | Termination::NewtonFailure { time }
            | Termination::Singularity { time } => Some(*time),
        }
    }
}

/// Which engine produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Full,
    Qss,
    Transient,
}

/// A time-stamped run with its discrete-event log and termination status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub model_kind: ModelKind,
    pub samples: Vec<(f64, PartitionedState)>,
    pub events: Vec<EventRecord>,
    pub termination: Termination,
    /// Largest `|g|_inf` observed at any accepted step.
    pub max_g_residual: f64,
    /// Largest `|f|_inf` at accepted steps (constraint residual for the
    /// constrained model; raw fast-rate magnitude otherwise).
    pub max_f_residual: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.samples.first().map(|(t, _)| *t).unwrap_or(0.0)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map(|(t, _)| *t).unwrap_or(0.0)
    }

    pub fn final_state(&self) -> Option<&PartitionedState> {
        self.samples.last().map(|(_, s)| s)
    }

    /// Linear interpolation of the continuous partitions at `t`; discrete
    /// states are taken from the sample at or before `t`.
    pub fn state_at(&self, t: f64) -> Option<PartitionedState> {
        if self.samples.is_empty() {
            return None;
        }
        let (t0, _) = self.samples[0];
        let (tn, _) = self.samples[self.samples.len() - 1];
        if t < t0 - 1e-12 || t > tn + 1e-12 {
            return None;
        }
        let pos = self
            .samples
            .partition_point(|(ts, _)| *ts <= t);
        if pos == 0 {
            return Some(self.samples[0].1.clone());
        }
        if pos == self.samples.len() {
            return Some(self.samples[pos - 1].1.clone());
        }
        let (ta, sa) = &self.samples[pos - 1];
        let (tb, sb) = &self.samples[pos];
        let w = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        let mut out = sa.clone();
        out.zc = &sa.zc * (1.0 - w) + &sb.zc * w;
        out.x = &sa.x * (1.0 - w) + &sb.x * w;
        out.y = &sa.y * (1.0 - w) + &sb.y * w;
        out.set_time(t);
        Some(out)
    }

    /// Events that changed the dynamics (tap moves, limiter activations,
    /// contingencies) as opposed to timer bookkeeping.
    pub fn dynamic_events(&self) -> Vec<&EventRecord> {
        use crate::model::EventKind::*;
        self.events
            .iter()
            .filter(|e| matches!(e.kind, LtcTap | OxlActivation | Contingency | DiscreteMap))
            .collect()
    }
}

/// Shared run supervision: divergence detection and equilibrium dwell.
pub(crate) struct RunMonitor {
    state_bound: f64,
    window: f64,
    growth: f64,
    floor: f64,
    sep_tolerance: f64,
    sep_dwell: f64,
    /// (time, fast-state norm) history for the oscillation detector.
    history: Vec<(f64, f64)>,
    below_since: Option<f64>,
}

impl RunMonitor {
    pub fn new(cfg: &IntegratorConfig) -> Self {
        Self {
            state_bound: cfg.state_bound,
            window: cfg.oscillation_window,
            growth: cfg.oscillation_growth,
            floor: cfg.oscillation_floor,
            sep_tolerance: cfg.sep_tolerance,
            sep_dwell: cfg.sep_dwell,
            history: Vec::new(),
            below_since: None,
        }
    }

    /// Check an accepted sample. `conv_measure` is the residual norm that
    /// must stay small for the run to count as settled.
    pub fn check(
        &mut self,
        t: f64,
        state: &PartitionedState,
        conv_measure: f64,
    ) -> Option<Termination> {
        if !state.is_finite() {
            return Some(Termination::Diverged {
                reason: "non-finite state".into(),
                time: t,
            });
        }
        if !state.x.is_empty() && state.x.amax() > self.state_bound {
            return Some(Termination::Diverged {
                reason: format!("fast state magnitude exceeded {:.1e}", self.state_bound),
                time: t,
            });
        }

        let xnorm = state.x.norm();
        self.history.push((t, xnorm));
        let horizon = 3.0 * self.window;
        while self
            .history
            .first()
            .is_some_and(|(t0, _)| t - t0 > horizon + 1e-9)
        {
            self.history.remove(0);
        }
        if let Some((t0, _)) = self.history.first().copied() {
            if t - t0 >= horizon - 1e-9 {
                let amp = |lo: f64, hi: f64| -> f64 {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for &(ts, v) in &self.history {
                        if ts >= lo && ts <= hi {
                            min = min.min(v);
                            max = max.max(v);
                        }
                    }
                    if min.is_finite() {
                        max - min
                    } else {
                        0.0
                    }
                };
                let a1 = amp(t - 3.0 * self.window, t - 2.0 * self.window);
                let a2 = amp(t - 2.0 * self.window, t - self.window);
                let a3 = amp(t - self.window, t);
                if a3 > self.floor && a3 > self.growth * a2 && a2 > self.growth * a1 && a1 > 0.0 {
                    return Some(Termination::Diverged {
                        reason: format!(
                            "fast-state oscillation growing over 3 windows ({:.3e} -> {:.3e} -> {:.3e})",
                            a1, a2, a3
                        ),
                        time: t,
                    });
                }
            }
        }

        if conv_measure < self.sep_tolerance {
            let since = *self.below_since.get_or_insert(t);
            if t - since >= self.sep_dwell {
                return Some(Termination::ConvergedToSep { time: t });
            }
        } else {
            self.below_since = None;
        }
        None
    }

    /// Forget oscillation history (after discrete events, which legitimately
    /// kick the fast states).
    pub fn reset_window(&mut self) {
        self.history.clear();
    }
}

/// Record for in-run constraint maintenance.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct ResidualTracker {
    pub max_g: f64,
    pub max_f: f64,
}

impl ResidualTracker {
    pub fn update(&mut self, f_norm: f64, g_norm: f64) {
        self.max_f = self.max_f.max(f_norm);
        self.max_g = self.max_g.max(g_norm);
    }
}

pub(crate) fn empty_trajectory(
    kind: ModelKind,
    initial: &PartitionedState,
    termination: Termination,
) -> Trajectory {
    Trajectory {
        model_kind: kind,
        samples: vec![(initial.t, initial.clone())],
        events: Vec::new(),
        termination,
        max_g_residual: 0.0,
        max_f_residual: 0.0,
        warnings: Vec::new(),
    }
}

/// Guard against schedules referencing models without topology.
pub(crate) fn validate_schedule<M: DynamicModel>(
    _model: &M,
    schedule: &EventSchedule,
) -> Result<()> {
    for w in schedule.timed.windows(2) {
        if w[1].time < w[0].time {
            return Err(Error::Structure(
                "event schedule must be sorted by time".into(),
            ));
        }
    }
    Ok(())
}
