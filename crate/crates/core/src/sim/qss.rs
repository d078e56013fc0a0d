//! The constrained (quasi-steady-state) engine: the fast dynamics are
//! replaced by their equilibrium equations, so the slow states advance by
//! implicit trapezoidal along `0 = f, 0 = g`. After every accepted step and
//! every discrete event the fast/algebraic pair is re-anchored onto the
//! constraint manifold; the iteration matrix is refreshed on events by
//! default, as slow convergence forces.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DynamicModel, EventKind, EventRecord};
use crate::sim::constraint::solve_constraint;
use crate::sim::newton::NewtonWorkspace;
use crate::sim::{
    empty_trajectory, validate_schedule, EventSchedule, IntegratorConfig, JacobianRefresh,
    ModelKind, ResidualTracker, RunMonitor, Termination, Trajectory,
};
use crate::state::PartitionedState;

const TIME_EPS: f64 = 1e-9;

/// Integrate the constrained model from (a manifold point near) `initial`.
pub fn run_qss<M: DynamicModel>(
    model: &M,
    initial: &PartitionedState,
    config: &IntegratorConfig,
    schedule: &EventSchedule,
) -> Result<Trajectory> {
    validate_schedule(model, schedule)?;
    if !initial.matches_layout(model.layout()) {
        return Err(Error::DimensionMismatch(
            "initial state does not match model layout".into(),
        ));
    }

    let mut warnings = Vec::new();
    let mut m = model.clone();
    let mut state = initial.clone();

    // Anchor the start point onto the manifold.
    match solve_constraint(&m, &state, config.tolerance, 4 * config.max_newton_iterations) {
        Ok(sol) => {
            if sol.iterations > 0 {
                warnings.push(format!(
                    "initial point anchored onto the constraint manifold in {} iterations",
                    sol.iterations
                ));
            }
            state.x = sol.x;
            state.y = sol.y;
        }
        Err(e) => return Err(Error::EquilibriumSolve(format!("no manifold point near the initial state: {e}"))),
    }

    let t_end = state.t + config.horizon;
    if config.horizon <= 0.0 {
        let mut tr = empty_trajectory(ModelKind::Qss, &state, Termination::HorizonReached);
        tr.warnings = warnings;
        return Ok(tr);
    }

    let mut t = state.t;
    let mut samples = vec![(t, state.clone())];
    let mut events: Vec<EventRecord> = Vec::new();
    let mut monitor = RunMonitor::new(config);
    let mut tracker = ResidualTracker::default();
    let mut ws = NewtonWorkspace::new();
    let mut pending: Vec<&crate::sim::TimedEvent> = schedule.timed.iter().collect();
    let mut r_now = m.residuals(&state)?;

    let termination = 'run: loop {
        // Scheduled topology changes.
        while pending.first().is_some_and(|ev| ev.time <= t + TIME_EPS) {
            let ev = pending.remove(0);
            let zd_before = state.zd.iter().copied().collect();
            m = m.apply_contingency_event(&ev.event)?;
            match reanchor(&m, &mut state, config) {
                Ok(()) => {}
                Err(term) => break 'run term,
            }
            events.push(EventRecord {
                time: t,
                kind: EventKind::Contingency,
                description: format!("{:?}", ev.event),
                zd_before,
                zd_after: state.zd.iter().copied().collect(),
                post_state: Some(state.clone()),
            });
            monitor.reset_window();
            ws.invalidate();
            r_now = m.residuals(&state)?;
        }

        // Discrete devices.
        let update = m.discrete_update(&state, t);
        if update.changed {
            let zd_before: Vec<f64> = state.zd.iter().copied().collect();
            state.zd = update.zd;
            if update.dynamics_changed {
                match reanchor(&m, &mut state, config) {
                    Ok(()) => {}
                    Err(term) => break 'run term,
                }
                monitor.reset_window();
                ws.invalidate();
                r_now = m.residuals(&state)?;
            }
            for (kind, description) in update.records {
                events.push(EventRecord {
                    time: t,
                    kind,
                    description,
                    zd_before: zd_before.clone(),
                    zd_after: state.zd.iter().copied().collect(),
                    post_state: Some(state.clone()),
                });
            }
        }

        if t >= t_end - TIME_EPS {
            break Termination::HorizonReached;
        }

        let mut dt = config.step.min(t_end - t);
        if let Some(ev) = pending.first() {
            if ev.time > t + TIME_EPS {
                dt = dt.min(ev.time - t);
            }
        }

        let mut halvings = 0;
        let next_state = loop {
            match constrained_step(&m, &state, &r_now, dt, config, &mut ws) {
                Ok(s) => break s,
                Err(Error::NewtonStagnation { .. }) if halvings < config.max_step_halvings => {
                    dt *= 0.5;
                    halvings += 1;
                    ws.invalidate();
                }
                Err(Error::SingularAlgebraicBlock { inv_cond }) => {
                    warnings.push(format!(
                        "algebraic block numerically singular at t={:.4} (1/cond {inv_cond:.3e})",
                        t + dt
                    ));
                    break 'run Termination::Singularity { time: t };
                }
                Err(Error::NewtonSingular) => {
                    // Distinguish a singular manifold from plain stagnation.
                    let inv_cond = m
                        .jacobian(&state)
                        .map(|j| crate::dae::inverse_condition(&j.algebraic_block()))
                        .unwrap_or(0.0);
                    if inv_cond < crate::dae::SINGULARITY_TOLERANCE {
                        break 'run Termination::Singularity { time: t };
                    }
                    if halvings < config.max_step_halvings {
                        dt *= 0.5;
                        halvings += 1;
                        ws.invalidate();
                    } else {
                        break 'run Termination::NewtonFailure { time: t };
                    }
                }
                Err(Error::NewtonStagnation { .. }) => {
                    break 'run Termination::NewtonFailure { time: t };
                }
                Err(e) => {
                    warnings.push(format!("constrained step failed at t={:.4}: {e}", t + dt));
                    break 'run Termination::NewtonFailure { time: t };
                }
            }
        };

        t += dt;
        state = next_state;
        state.set_time(t);
        if config.jacobian_refresh == JacobianRefresh::EveryStep {
            ws.invalidate();
        }

        match m.residuals(&state) {
            Ok(r) => {
                tracker.update(r.f_norm(), r.g_norm());
                samples.push((t, state.clone()));
                if let Some(term) = monitor.check(t, &state, r.hc_norm()) {
                    break term;
                }
                r_now = r;
            }
            Err(_) => {
                break Termination::Diverged {
                    reason: "non-finite residuals".into(),
                    time: t,
                };
            }
        }
    };

    Ok(Trajectory {
        model_kind: ModelKind::Qss,
        samples,
        events,
        termination,
        max_g_residual: tracker.max_g,
        max_f_residual: tracker.max_f,
        warnings,
    })
}

fn reanchor<M: DynamicModel>(
    model: &M,
    state: &mut PartitionedState,
    config: &IntegratorConfig,
) -> std::result::Result<(), Termination> {
    match solve_constraint(model, state, config.tolerance, 4 * config.max_newton_iterations) {
        Ok(sol) => {
            state.x = sol.x;
            state.y = sol.y;
            Ok(())
        }
        Err(Error::SingularAlgebraicBlock { .. }) => {
            Err(Termination::Singularity { time: state.t })
        }
        Err(_) => Err(Termination::NewtonFailure { time: state.t }),
    }
}

/// One trapezoidal step of `dz_c/dt = h_c` constrained by `0 = f, 0 = g`,
/// solved simultaneously over (z_c, x, y).
fn constrained_step<M: DynamicModel>(
    model: &M,
    state: &PartitionedState,
    r_start: &crate::dae::ResidualVector,
    dt: f64,
    config: &IntegratorConfig,
    ws: &mut NewtonWorkspace,
) -> Result<PartitionedState> {
    let (nz, nx, ny) = (state.zc.len(), state.x.len(), state.y.len());
    let half = dt / 2.0;
    let zc_n = state.zc.clone();

    let mut work = state.clone();
    let mut residual = |u: &DVector<f64>| -> Result<DVector<f64>> {
        work.set_continuous(u);
        let r = model.residuals(&work)?;
        let mut out = DVector::zeros(nz + nx + r.g.len());
        for i in 0..nz {
            out[i] = work.zc[i] - zc_n[i] - half * (r_start.hc[i] + r.hc[i]);
        }
        out.rows_mut(nz, nx).copy_from(&r.f);
        out.rows_mut(nz + nx, r.g.len()).copy_from(&r.g);
        Ok(out)
    };

    let mut work_j = state.clone();
    let mut matrix = |u: &DVector<f64>| -> Result<DMatrix<f64>> {
        work_j.set_continuous(u);
        let j = model.jacobian(&work_j)?;
        let n = nz + nx + ny;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..nz {
            m[(i, i)] = 1.0;
        }
        j.dzc_hc.add_scaled_into(&mut m, 0, 0, -half);
        j.dx_hc.add_scaled_into(&mut m, 0, nz, -half);
        j.dy_hc.add_scaled_into(&mut m, 0, nz + nx, -half);
        j.dzc_f.add_into(&mut m, nz, 0);
        j.dx_f.add_into(&mut m, nz, nz);
        j.dy_f.add_into(&mut m, nz, nz + nx);
        j.dzc_g.add_into(&mut m, nz + nx, 0);
        j.dx_g.add_into(&mut m, nz + nx, nz);
        j.dy_g.add_into(&mut m, nz + nx, nz + nx);
        Ok(m)
    };

    let mut u = state.continuous_vector();
    ws.solve(
        &mut u,
        &mut residual,
        &mut matrix,
        config.tolerance,
        config.max_newton_iterations,
        false,
    )?;
    let mut out = state.clone();
    out.set_continuous(&u);
    Ok(out)
}
