//! The transient (fast subsystem) engine: slow states frozen as parameters,
//! implicit trapezoidal on `dx/dt = f` subject to `0 = g`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::DynamicModel;
use crate::sim::constraint::project_algebraic;
use crate::sim::newton::NewtonWorkspace;
use crate::sim::{
    empty_trajectory, IntegratorConfig, JacobianRefresh, ModelKind, ResidualTracker, RunMonitor,
    Termination, Trajectory,
};
use crate::state::PartitionedState;

const TIME_EPS: f64 = 1e-9;

/// Integrate the fast model from `initial` with (z_c, z_d) frozen at the
/// values carried by `initial`. Inconsistent initial conditions are
/// projected onto `g = 0` at fixed x first. Discrete devices never fire.
pub fn run_transient<M: DynamicModel>(
    model: &M,
    initial: &PartitionedState,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    if !initial.matches_layout(model.layout()) {
        return Err(Error::DimensionMismatch(
            "initial state does not match model layout".into(),
        ));
    }
    let mut warnings = Vec::new();
    let mut state = initial.clone();

    let r0 = model.residuals(&state)?;
    if r0.g_norm() > config.tolerance {
        state.y = project_algebraic(model, &state, config.tolerance, 2 * config.max_newton_iterations)?;
        warnings.push(format!(
            "initial point projected onto g = 0 (residual was {:.3e})",
            r0.g_norm()
        ));
    }

    let t_end = state.t + config.horizon;
    if config.horizon <= 0.0 {
        let mut tr = empty_trajectory(ModelKind::Transient, &state, Termination::HorizonReached);
        tr.warnings = warnings;
        return Ok(tr);
    }

    let mut t = state.t;
    let mut samples = vec![(t, state.clone())];
    let mut monitor = RunMonitor::new(config);
    let mut tracker = ResidualTracker::default();
    let mut ws = NewtonWorkspace::new();
    let mut r_now = model.residuals(&state)?;

    let termination = 'outer: loop {
        if t >= t_end - TIME_EPS {
            break Termination::HorizonReached;
        }
        let mut dt = config.step.min(t_end - t);
        let mut halvings = 0;
        let next_state = loop {
            match fast_step(model, &state, &r_now, dt, config, &mut ws) {
                Ok(s) => break s,
                Err(Error::NewtonStagnation { .. }) | Err(Error::NewtonSingular)
                    if halvings < config.max_step_halvings =>
                {
                    dt *= 0.5;
                    halvings += 1;
                    ws.invalidate();
                }
                Err(Error::NewtonStagnation { .. }) | Err(Error::NewtonSingular) => {
                    break 'outer Termination::NewtonFailure { time: t };
                }
                Err(e) => {
                    warnings.push(format!("step solve failed at t={:.4}: {e}", t + dt));
                    break 'outer Termination::NewtonFailure { time: t };
                }
            }
        };

        t += dt;
        state = next_state;
        state.set_time(t);
        if config.jacobian_refresh == JacobianRefresh::EveryStep {
            ws.invalidate();
        }

        match model.residuals(&state) {
            Ok(r) => {
                tracker.update(r.f_norm(), r.g_norm());
                samples.push((t, state.clone()));
                if let Some(term) = monitor.check(t, &state, r.f_norm()) {
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
        model_kind: ModelKind::Transient,
        samples,
        events: Vec::new(),
        termination,
        max_g_residual: tracker.max_g,
        max_f_residual: tracker.max_f,
        warnings,
    })
}

fn fast_step<M: DynamicModel>(
    model: &M,
    state: &PartitionedState,
    r_start: &crate::dae::ResidualVector,
    dt: f64,
    config: &IntegratorConfig,
    ws: &mut NewtonWorkspace,
) -> Result<PartitionedState> {
    let (nx, ny) = (state.x.len(), state.y.len());
    let half = dt / 2.0;
    let x_n = state.x.clone();

    let unpack = |u: &DVector<f64>, into: &mut PartitionedState| {
        into.x.copy_from(&u.rows(0, nx).into_owned());
        into.y.copy_from(&u.rows(nx, ny).into_owned());
    };

    let mut work = state.clone();
    let mut residual = |u: &DVector<f64>| -> Result<DVector<f64>> {
        unpack(u, &mut work);
        let r = model.residuals(&work)?;
        let mut out = DVector::zeros(nx + r.g.len());
        for i in 0..nx {
            out[i] = work.x[i] - x_n[i] - half * (r_start.f[i] + r.f[i]);
        }
        out.rows_mut(nx, r.g.len()).copy_from(&r.g);
        Ok(out)
    };

    let mut work_j = state.clone();
    let mut matrix = |u: &DVector<f64>| -> Result<DMatrix<f64>> {
        unpack(u, &mut work_j);
        let j = model.jacobian(&work_j)?;
        let n = nx + ny;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..nx {
            m[(i, i)] = 1.0;
        }
        j.dx_f.add_scaled_into(&mut m, 0, 0, -half);
        j.dy_f.add_scaled_into(&mut m, 0, nx, -half);
        j.dx_g.add_into(&mut m, nx, 0);
        j.dy_g.add_into(&mut m, nx, nx);
        Ok(m)
    };

    let mut u = DVector::zeros(nx + ny);
    u.rows_mut(0, nx).copy_from(&state.x);
    u.rows_mut(nx, ny).copy_from(&state.y);
    ws.solve(
        &mut u,
        &mut residual,
        &mut matrix,
        config.tolerance,
        config.max_newton_iterations,
        false,
    )?;
    let mut out = state.clone();
    unpack(&u, &mut out);
    Ok(out)
}
