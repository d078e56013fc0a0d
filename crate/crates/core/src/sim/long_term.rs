//! The full multi-timescale engine: implicit trapezoidal integration of the
//! stiff DAE in (z_c, x, y) with z_d frozen between discrete events.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DynamicModel, EventKind, EventRecord};
use crate::sim::constraint::project_algebraic;
use crate::sim::newton::NewtonWorkspace;
use crate::sim::{
    empty_trajectory, validate_schedule, EventSchedule, IntegratorConfig, JacobianRefresh,
    ModelKind, ResidualTracker, RunMonitor, Termination, Trajectory,
};
use crate::state::PartitionedState;

const INIT_RESIDUAL_WARN: f64 = 1e-6;
const TIME_EPS: f64 = 1e-9;

/// Integrate the long-term model from `initial` until the horizon, a
/// detected equilibrium, or a detected instability. Timed contingencies are
/// applied from `schedule`; device events are polled each accepted step.
pub fn run_long_term<M: DynamicModel>(
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
    let r0 = model.residuals(initial)?;
    if r0.max_norm() > INIT_RESIDUAL_WARN {
        warnings.push(format!(
            "initial residual {:.3e} exceeds init tolerance {:.1e}",
            r0.max_norm(),
            INIT_RESIDUAL_WARN
        ));
    }

    let t_end = initial.t + config.horizon;
    if config.horizon <= 0.0 {
        let mut tr = empty_trajectory(ModelKind::Full, initial, Termination::HorizonReached);
        tr.warnings = warnings;
        return Ok(tr);
    }

    let mut m = model.clone();
    let mut state = initial.clone();
    let mut t = initial.t;
    let mut samples = vec![(t, state.clone())];
    let mut events: Vec<EventRecord> = Vec::new();
    let mut monitor = RunMonitor::new(config);
    let mut tracker = ResidualTracker::default();
    let mut ws = NewtonWorkspace::new();
    let mut pending: Vec<&crate::sim::TimedEvent> = schedule.timed.iter().collect();

    let mut r_now = r0;

    let termination = 'run: loop {
        // Scheduled topology changes due now.
        while pending.first().is_some_and(|ev| ev.time <= t + TIME_EPS) {
            let ev = pending.remove(0);
            let zd_before = state.zd.iter().copied().collect();
            m = m.apply_contingency_event(&ev.event)?;
            match project_algebraic(&m, &state, config.tolerance, 2 * config.max_newton_iterations)
            {
                Ok(y) => state.y = y,
                Err(e) => {
                    warnings.push(format!(
                        "algebraic projection failed after contingency at {t:.4}: {e}"
                    ));
                    break 'run Termination::NewtonFailure { time: t };
                }
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

        // Device-driven discrete transitions, all observing the same
        // pre-event state.
        let update = m.discrete_update(&state, t);
        if update.changed {
            let zd_before: Vec<f64> = state.zd.iter().copied().collect();
            state.zd = update.zd;
            if update.dynamics_changed {
                match project_algebraic(&m, &state, config.tolerance, 2 * config.max_newton_iterations)
                {
                    Ok(y) => state.y = y,
                    Err(e) => {
                        warnings.push(format!(
                            "algebraic projection failed after z_d event at {t:.4}: {e}"
                        ));
                        break 'run Termination::NewtonFailure { time: t };
                    }
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

        // Step size: honor the horizon and the next scheduled event.
        let mut dt_target = config.step.min(t_end - t);
        if let Some(ev) = pending.first() {
            if ev.time > t + TIME_EPS {
                dt_target = dt_target.min(ev.time - t);
            }
        }

        // Trapezoidal step with step-halving retries.
        let mut dt = dt_target;
        let mut halvings = 0;
        let next_state = loop {
            match trapezoidal_step(&m, &state, &r_now, dt, config, &mut ws) {
                Ok(s) => break s,
                Err(Error::NewtonStagnation { .. }) | Err(Error::NewtonSingular)
                    if halvings < config.max_step_halvings =>
                {
                    dt *= 0.5;
                    halvings += 1;
                    ws.invalidate();
                }
                Err(Error::NewtonStagnation { residual, .. }) => {
                    warnings.push(format!(
                        "newton stagnated at t={:.4} (residual {residual:.3e}) after {halvings} halvings",
                        t + dt
                    ));
                    break 'run Termination::NewtonFailure { time: t };
                }
                Err(e) => {
                    warnings.push(format!("step solve failed at t={:.4}: {e}", t + dt));
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
                let conv = r.f_norm().max(r.hc_norm());
                samples.push((t, state.clone()));
                if let Some(term) = monitor.check(t, &state, conv) {
                    break term;
                }
                r_now = r;
            }
            Err(e) => {
                warnings.push(format!("residual evaluation failed at t={t:.4}: {e}"));
                break Termination::Diverged {
                    reason: "non-finite residuals".into(),
                    time: t,
                };
            }
        }
    };

    Ok(Trajectory {
        model_kind: ModelKind::Full,
        samples,
        events,
        termination,
        max_g_residual: tracker.max_g,
        max_f_residual: tracker.max_f,
        warnings,
    })
}

/// One implicit trapezoidal step of the (z_c, x, y) system at frozen z_d.
fn trapezoidal_step<M: DynamicModel>(
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
    let x_n = state.x.clone();

    let mut work = state.clone();
    let mut residual = |u: &DVector<f64>| -> Result<DVector<f64>> {
        work.set_continuous(u);
        let r = model.residuals(&work)?;
        let mut out = DVector::zeros(nz + nx + r.g.len());
        for i in 0..nz {
            out[i] = work.zc[i] - zc_n[i] - half * (r_start.hc[i] + r.hc[i]);
        }
        for i in 0..nx {
            out[nz + i] = work.x[i] - x_n[i] - half * (r_start.f[i] + r.f[i]);
        }
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
        for i in 0..nx {
            m[(nz + i, nz + i)] = 1.0;
        }
        j.dzc_hc.add_scaled_into(&mut m, 0, 0, -half);
        j.dx_hc.add_scaled_into(&mut m, 0, nz, -half);
        j.dy_hc.add_scaled_into(&mut m, 0, nz + nx, -half);
        j.dzc_f.add_scaled_into(&mut m, nz, 0, -half);
        j.dx_f.add_scaled_into(&mut m, nz, nz, -half);
        j.dy_f.add_scaled_into(&mut m, nz, nz + nx, -half);
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
