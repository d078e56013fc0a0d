//! Anchoring a point onto the constraint manifold: solve `0 = f, 0 = g`
//! for (x, y) at fixed slow state.

use nalgebra::{DMatrix, DVector};

use crate::dae::inverse_condition;
use crate::error::{Error, Result};
use crate::model::DynamicModel;
use crate::sim::newton::{inf_norm, NewtonWorkspace};
use crate::state::PartitionedState;

#[derive(Debug, Clone)]
pub struct ConstraintSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Newton solve of `0 = f, 0 = g` at the slow state carried by `guess`,
/// with multiplier damping. The guess's (x, y) seed the iteration. Returns
/// the manifold point or a singularity/stagnation error.
pub fn solve_constraint<M: DynamicModel>(
    model: &M,
    guess: &PartitionedState,
    tolerance: f64,
    max_iterations: usize,
) -> Result<ConstraintSolution> {
    let (nx, ny) = (guess.x.len(), guess.y.len());
    let state = guess.clone();

    let pack = |s: &PartitionedState| -> DVector<f64> {
        let mut u = DVector::zeros(nx + ny);
        u.rows_mut(0, nx).copy_from(&s.x);
        u.rows_mut(nx, ny).copy_from(&s.y);
        u
    };
    let mut u = pack(&state);

    let base = state.clone();
    let unpack = |u: &DVector<f64>, into: &mut PartitionedState| {
        into.x.copy_from(&u.rows(0, nx).into_owned());
        into.y.copy_from(&u.rows(nx, ny).into_owned());
    };

    let mut ws = NewtonWorkspace::new();
    let mut work = base.clone();
    let mut residual = |u: &DVector<f64>| -> Result<DVector<f64>> {
        unpack(u, &mut work);
        let r = model.residuals(&work)?;
        let mut out = DVector::zeros(nx + r.g.len());
        out.rows_mut(0, nx).copy_from(&r.f);
        out.rows_mut(nx, r.g.len()).copy_from(&r.g);
        Ok(out)
    };
    let mut work_j = base.clone();
    let mut matrix = |u: &DVector<f64>| -> Result<DMatrix<f64>> {
        unpack(u, &mut work_j);
        let j = model.jacobian(&work_j)?;
        let block = j.algebraic_block();
        let inv_cond = inverse_condition(&block);
        if inv_cond < crate::dae::SINGULARITY_TOLERANCE {
            return Err(Error::SingularAlgebraicBlock { inv_cond });
        }
        Ok(block)
    };

    let iterations = ws.solve(
        &mut u,
        &mut residual,
        &mut matrix,
        tolerance,
        max_iterations,
        true,
    )?;
    let r = residual(&u)?;
    let mut out_state = base;
    unpack(&u, &mut out_state);
    Ok(ConstraintSolution {
        x: out_state.x.clone(),
        y: out_state.y.clone(),
        iterations,
        residual: inf_norm(&r),
    })
}

/// Project the algebraic variables onto `g = 0` at fixed (z, x): the
/// consistency restore used after discontinuities of the long-term and
/// transient models.
pub fn project_algebraic<M: DynamicModel>(
    model: &M,
    state: &PartitionedState,
    tolerance: f64,
    max_iterations: usize,
) -> Result<DVector<f64>> {
    let base = state.clone();

    let mut work = base.clone();
    let mut residual = |u: &DVector<f64>| -> Result<DVector<f64>> {
        work.y.copy_from(u);
        Ok(model.residuals(&work)?.g)
    };
    let mut work_j = base.clone();
    let mut matrix = |u: &DVector<f64>| -> Result<DMatrix<f64>> {
        work_j.y.copy_from(u);
        let j = model.jacobian(&work_j)?;
        let dyg = j.dy_g.to_dense();
        let inv_cond = inverse_condition(&dyg);
        if inv_cond < crate::dae::SINGULARITY_TOLERANCE {
            return Err(Error::SingularAlgebraicBlock { inv_cond });
        }
        Ok(dyg)
    };

    let mut u = state.y.clone();
    let mut ws = NewtonWorkspace::new();
    ws.solve(
        &mut u,
        &mut residual,
        &mut matrix,
        tolerance,
        max_iterations,
        true,
    )?;
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::{JacobianBundle, ResidualVector};
    use crate::model::DiscreteUpdate;
    use crate::state::PartitionLayout;
    use approx::assert_relative_eq;

    /// f = z - x, g = x - y.
    #[derive(Clone)]
    struct Chain {
        layout: PartitionLayout,
    }

    impl Chain {
        fn new() -> Self {
            Self {
                layout: PartitionLayout {
                    zc_names: vec!["z".into()],
                    zd_names: vec![],
                    x_names: vec!["x".into()],
                    y_names: vec!["y".into()],
                    n_g: 1,
                },
            }
        }
    }

    impl DynamicModel for Chain {
        fn name(&self) -> &str {
            "chain"
        }
        fn layout(&self) -> &PartitionLayout {
            &self.layout
        }
        fn epsilon(&self) -> f64 {
            1.0
        }
        fn residuals(&self, s: &PartitionedState) -> Result<ResidualVector> {
            let mut r = ResidualVector::zeros(1, 1, 1);
            r.hc[0] = 0.0;
            r.f[0] = s.zc[0] - s.x[0];
            r.g[0] = s.x[0] - s.y[0];
            Ok(r)
        }
        fn jacobian(&self, s: &PartitionedState) -> Result<JacobianBundle> {
            let mut b = JacobianBundle::empty(1, 1, 1, 1, s.clone());
            b.dx_f.push(0, 0, -1.0);
            b.dzc_f.push(0, 0, 1.0);
            b.dx_g.push(0, 0, 1.0);
            b.dy_g.push(0, 0, -1.0);
            Ok(b)
        }
        fn discrete_update(&self, s: &PartitionedState, _tau: f64) -> DiscreteUpdate {
            DiscreteUpdate::unchanged(s.zd.clone())
        }
        fn apply_contingency_event(&self, _e: &crate::grid::ContingencyEvent) -> Result<Self> {
            Err(Error::Structure("no topology".into()))
        }
    }

    /// g-like fast row: f = z - x^2 (no y).
    #[derive(Clone)]
    struct Quad {
        layout: PartitionLayout,
    }

    impl DynamicModel for Quad {
        fn name(&self) -> &str {
            "quad"
        }
        fn layout(&self) -> &PartitionLayout {
            &self.layout
        }
        fn epsilon(&self) -> f64 {
            1.0
        }
        fn residuals(&self, s: &PartitionedState) -> Result<ResidualVector> {
            let mut r = ResidualVector::zeros(1, 1, 0);
            r.f[0] = s.zc[0] - s.x[0] * s.x[0];
            Ok(r)
        }
        fn jacobian(&self, s: &PartitionedState) -> Result<JacobianBundle> {
            let mut b = JacobianBundle::empty(1, 1, 0, 0, s.clone());
            b.dx_f.push(0, 0, -2.0 * s.x[0]);
            b.dzc_f.push(0, 0, 1.0);
            Ok(b)
        }
        fn discrete_update(&self, s: &PartitionedState, _tau: f64) -> DiscreteUpdate {
            DiscreteUpdate::unchanged(s.zd.clone())
        }
        fn apply_contingency_event(&self, _e: &crate::grid::ContingencyEvent) -> Result<Self> {
            Err(Error::Structure("no topology".into()))
        }
    }

    #[test]
    fn linear_chain_solves_exactly() {
        let m = Chain::new();
        let mut s = PartitionedState::zeros(m.layout(), 1.0);
        s.zc[0] = 2.0;
        s.x[0] = 0.0;
        s.y[0] = 0.0;
        let sol = solve_constraint(&m, &s, 1e-12, 50).unwrap();
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(sol.y[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn on_manifold_guess_returns_unchanged() {
        let m = Chain::new();
        let mut s = PartitionedState::zeros(m.layout(), 1.0);
        s.zc[0] = 2.0;
        s.x[0] = 2.0;
        s.y[0] = 2.0;
        let sol = solve_constraint(&m, &s, 1e-10, 50).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x[0], 2.0);
        assert_eq!(sol.y[0], 2.0);
    }

    #[test]
    fn quadratic_converges_to_nearest_branch() {
        let m = Quad {
            layout: PartitionLayout {
                zc_names: vec!["z".into()],
                zd_names: vec![],
                x_names: vec!["x".into()],
                y_names: vec![],
                n_g: 0,
            },
        };
        let mut s = PartitionedState::zeros(m.layout(), 1.0);
        s.zc[0] = 4.0;
        s.x[0] = 1.0;
        let sol = solve_constraint(&m, &s, 1e-12, 60).unwrap();
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-9);
    }
}
