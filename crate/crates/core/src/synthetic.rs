//! Small constructed DAE systems bundled alongside the power cases.
//!
//! - [`LinearTikhonov`]: one slow and one fast state with an explicit
//!   stiffness parameter; the QSS trajectory is known in closed form.
//! - [`QuadraticFold`]: slow drift toward a fold of the constraint where the
//!   algebraic block loses rank.
//! - [`Cause2Hopf`]: a discrete jump flips the fast subsystem from a stable
//!   focus to an unstable one (two eigenvalues crossing into the right half
//!   plane) while the constraint stays solvable, so a constrained run sails
//!   on where the full model spirals out.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::dae::{JacobianBundle, ResidualVector};
use crate::error::{Error, Result};
use crate::grid::ContingencyEvent;
use crate::model::{DiscreteUpdate, DynamicModel, EventKind};
use crate::state::{PartitionLayout, PartitionedState};

/// `dz/dt = -z`, `eps dx/dt = -(x - z)`. On the constraint `x = z` the slow
/// flow is `z(t) = z0 exp(-t)` exactly.
#[derive(Debug, Clone)]
pub struct LinearTikhonov {
    pub eps: f64,
    layout: PartitionLayout,
}

impl LinearTikhonov {
    pub fn new(eps: f64) -> Self {
        assert!(eps > 0.0);
        Self {
            eps,
            layout: PartitionLayout {
                zc_names: vec!["zc.z".into()],
                zd_names: vec![],
                x_names: vec!["x.x".into()],
                y_names: vec![],
                n_g: 0,
            },
        }
    }

    pub fn initial_state(&self, z0: f64) -> PartitionedState {
        let mut s = PartitionedState::zeros(&self.layout, self.eps);
        s.zc[0] = z0;
        s.x[0] = z0;
        s
    }
}

impl DynamicModel for LinearTikhonov {
    fn name(&self) -> &str {
        "linear-tikhonov"
    }
    fn layout(&self) -> &PartitionLayout {
        &self.layout
    }
    fn epsilon(&self) -> f64 {
        self.eps
    }

    fn residuals(&self, state: &PartitionedState) -> Result<ResidualVector> {
        let mut r = ResidualVector::zeros(1, 1, 0);
        r.hc[0] = -state.zc[0];
        r.f[0] = -(state.x[0] - state.zc[0]) / self.eps;
        Ok(r)
    }

    fn jacobian(&self, state: &PartitionedState) -> Result<JacobianBundle> {
        let mut b = JacobianBundle::empty(1, 1, 0, 0, state.clone());
        b.dzc_hc.push(0, 0, -1.0);
        b.dx_f.push(0, 0, -1.0 / self.eps);
        b.dzc_f.push(0, 0, 1.0 / self.eps);
        Ok(b)
    }

    fn discrete_update(&self, state: &PartitionedState, _tau: f64) -> DiscreteUpdate {
        DiscreteUpdate::unchanged(state.zd.clone())
    }

    fn apply_contingency_event(&self, _event: &ContingencyEvent) -> Result<Self> {
        Err(Error::Structure("linear-tikhonov has no topology".into()))
    }
}

/// `dz/dt = -drift`, `eps dx/dt = z - x^2`. The constraint `x = sqrt(z)`
/// folds at `x = 0`: starting from `(z0, sqrt(z0))` the fold is reached at
/// `t = z0 / drift`, where `D_x f = -2x` changes sign through zero.
#[derive(Debug, Clone)]
pub struct QuadraticFold {
    pub eps: f64,
    pub drift: f64,
    layout: PartitionLayout,
}

impl QuadraticFold {
    pub fn new(eps: f64, drift: f64) -> Self {
        Self {
            eps,
            drift,
            layout: PartitionLayout {
                zc_names: vec!["zc.z".into()],
                zd_names: vec![],
                x_names: vec!["x.x".into()],
                y_names: vec![],
                n_g: 0,
            },
        }
    }

    pub fn initial_state(&self, z0: f64) -> PartitionedState {
        assert!(z0 > 0.0);
        let mut s = PartitionedState::zeros(&self.layout, self.eps);
        s.zc[0] = z0;
        s.x[0] = z0.sqrt();
        s
    }

    /// Closed-form fold time from `z0`.
    pub fn fold_time(&self, z0: f64) -> f64 {
        z0 / self.drift
    }
}

impl DynamicModel for QuadraticFold {
    fn name(&self) -> &str {
        "quadratic-fold"
    }
    fn layout(&self) -> &PartitionLayout {
        &self.layout
    }
    fn epsilon(&self) -> f64 {
        self.eps
    }

    fn residuals(&self, state: &PartitionedState) -> Result<ResidualVector> {
        let mut r = ResidualVector::zeros(1, 1, 0);
        r.hc[0] = -self.drift;
        r.f[0] = (state.zc[0] - state.x[0] * state.x[0]) / self.eps;
        Ok(r)
    }

    fn jacobian(&self, state: &PartitionedState) -> Result<JacobianBundle> {
        let mut b = JacobianBundle::empty(1, 1, 0, 0, state.clone());
        b.dx_f.push(0, 0, -2.0 * state.x[0] / self.eps);
        b.dzc_f.push(0, 0, 1.0 / self.eps);
        Ok(b)
    }

    fn discrete_update(&self, state: &PartitionedState, _tau: f64) -> DiscreteUpdate {
        DiscreteUpdate::unchanged(state.zd.clone())
    }

    fn apply_contingency_event(&self, _event: &ContingencyEvent) -> Result<Self> {
        Err(Error::Structure("quadratic-fold has no topology".into()))
    }
}

/// Linear fast subsystem `dx/dt = A(zd) x + B y + e_f zc`, algebraic row
/// `0 = C x + D y + e_g zc`, slow drift `dzc/dt = -kappa (zc - z_target)`.
///
/// The discrete map flips `zd` from 0 to 1 when `zc` drops below
/// `z_threshold`. The matrices are chosen so the reduced fast matrix
/// `A - B D^{-1} C` has eigenvalues `-0.5 +/- 0.7i` before the jump and
/// `+0.3 +/- 0.7i` after: the post-event equilibrium is type-2.
#[derive(Debug, Clone)]
pub struct Cause2Hopf {
    pub kappa: f64,
    pub z_target: f64,
    pub z_threshold: f64,
    layout: PartitionLayout,
}

pub const CAUSE2_B: [f64; 2] = [0.5, 0.5];
pub const CAUSE2_C: [f64; 2] = [0.5, 0.0];
pub const CAUSE2_D: f64 = -1.0;
pub const CAUSE2_EF: [f64; 2] = [0.1, 0.0];
pub const CAUSE2_EG: f64 = 0.2;

impl Cause2Hopf {
    pub fn new(kappa: f64, z_target: f64, z_threshold: f64) -> Self {
        Self {
            kappa,
            z_target,
            z_threshold,
            layout: PartitionLayout {
                zc_names: vec!["zc.z".into()],
                zd_names: vec!["zd.mode".into()],
                x_names: vec!["x.x1".into(), "x.x2".into()],
                y_names: vec!["y.y".into()],
                n_g: 1,
            },
        }
    }

    /// Fast matrix for the discrete mode. The Schur complement
    /// `A + 0.25 [[1,0],[1,0]]` evaluates to `[[-0.5, 0.7], [-0.7, -0.5]]`
    /// (mode 0) and `[[0.3, 0.7], [-0.7, 0.3]]` (mode 1).
    pub fn a_matrix(mode: f64) -> Matrix2<f64> {
        if mode < 0.5 {
            Matrix2::new(-0.75, 0.7, -0.95, -0.5)
        } else {
            Matrix2::new(0.05, 0.7, -0.95, 0.3)
        }
    }

    /// Reduced fast matrix `A - B D^{-1} C` for the mode.
    pub fn schur_matrix(mode: f64) -> Matrix2<f64> {
        let a = Self::a_matrix(mode);
        let b = Vector2::new(CAUSE2_B[0], CAUSE2_B[1]);
        let c = nalgebra::RowVector2::new(CAUSE2_C[0], CAUSE2_C[1]);
        a - b * c / CAUSE2_D
    }

    /// Equilibrium (x, y) for given `zc` and mode.
    pub fn equilibrium(&self, zc: f64, mode: f64) -> (Vector2<f64>, f64) {
        // Solve [[A, B], [C, D]] [x; y] = -[e_f zc; e_g zc].
        let a = Self::a_matrix(mode);
        let mut m = DMatrix::zeros(3, 3);
        for r in 0..2 {
            for c in 0..2 {
                m[(r, c)] = a[(r, c)];
            }
            m[(r, 2)] = CAUSE2_B[r];
            m[(2, r)] = CAUSE2_C[r];
        }
        m[(2, 2)] = CAUSE2_D;
        let rhs = DVector::from_vec(vec![
            -CAUSE2_EF[0] * zc,
            -CAUSE2_EF[1] * zc,
            -CAUSE2_EG * zc,
        ]);
        let sol = m.lu().solve(&rhs).expect("cause-2 block is nonsingular");
        (Vector2::new(sol[0], sol[1]), sol[2])
    }

    pub fn initial_state(&self, z0: f64) -> PartitionedState {
        let mut s = PartitionedState::zeros(&self.layout, 1.0);
        s.zc[0] = z0;
        s.zd[0] = 0.0;
        let (x, y) = self.equilibrium(z0, 0.0);
        s.x[0] = x[0];
        s.x[1] = x[1];
        s.y[0] = y;
        s
    }
}

impl DynamicModel for Cause2Hopf {
    fn name(&self) -> &str {
        "cause2-hopf"
    }
    fn layout(&self) -> &PartitionLayout {
        &self.layout
    }
    fn epsilon(&self) -> f64 {
        1.0
    }

    fn residuals(&self, state: &PartitionedState) -> Result<ResidualVector> {
        let mut r = ResidualVector::zeros(1, 2, 1);
        let a = Self::a_matrix(state.zd[0]);
        let x = Vector2::new(state.x[0], state.x[1]);
        let y = state.y[0];
        let zc = state.zc[0];
        let fx = a * x + Vector2::new(CAUSE2_B[0], CAUSE2_B[1]) * y
            + Vector2::new(CAUSE2_EF[0], CAUSE2_EF[1]) * zc;
        r.f[0] = fx[0];
        r.f[1] = fx[1];
        r.g[0] = CAUSE2_C[0] * state.x[0] + CAUSE2_C[1] * state.x[1] + CAUSE2_D * y + CAUSE2_EG * zc;
        r.hc[0] = -self.kappa * (zc - self.z_target);
        Ok(r)
    }

    fn jacobian(&self, state: &PartitionedState) -> Result<JacobianBundle> {
        let mut b = JacobianBundle::empty(1, 2, 1, 1, state.clone());
        let a = Self::a_matrix(state.zd[0]);
        for r in 0..2 {
            for c in 0..2 {
                b.dx_f.push(r, c, a[(r, c)]);
            }
            b.dy_f.push(r, 0, CAUSE2_B[r]);
            b.dzc_f.push(r, 0, CAUSE2_EF[r]);
            b.dx_g.push(0, r, CAUSE2_C[r]);
        }
        b.dy_g.push(0, 0, CAUSE2_D);
        b.dzc_g.push(0, 0, CAUSE2_EG);
        b.dzc_hc.push(0, 0, -self.kappa);
        Ok(b)
    }

    fn discrete_update(&self, state: &PartitionedState, _tau: f64) -> DiscreteUpdate {
        let mut zd = state.zd.clone();
        let mut records = Vec::new();
        if state.zd[0] < 0.5 && state.zc[0] <= self.z_threshold {
            zd[0] = 1.0;
            records.push((
                EventKind::DiscreteMap,
                format!("mode 0 -> 1 (zc {:.4} crossed {:.4})", state.zc[0], self.z_threshold),
            ));
        }
        let changed = !records.is_empty();
        DiscreteUpdate {
            zd,
            changed,
            dynamics_changed: changed,
            records,
        }
    }

    fn apply_contingency_event(&self, _event: &ContingencyEvent) -> Result<Self> {
        Err(Error::Structure("cause2-hopf has no topology".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::eigenvalues;
    use approx::assert_relative_eq;

    #[test]
    fn tikhonov_manifold_flow_is_exponential() {
        let m = LinearTikhonov::new(1e-2);
        let s = m.initial_state(2.0);
        let r = m.residuals(&s).unwrap();
        assert_relative_eq!(r.hc[0], -2.0);
        assert_relative_eq!(r.f[0], 0.0);
    }

    #[test]
    fn fold_jacobian_vanishes_at_origin() {
        let m = QuadraticFold::new(1e-2, 1.0);
        let mut s = m.initial_state(1.0);
        s.x[0] = 0.0;
        let j = m.jacobian(&s).unwrap();
        assert_eq!(j.dx_f.to_dense()[(0, 0)], 0.0);
    }

    #[test]
    fn cause2_schur_eigenvalues_flip_sign() {
        let pre = Cause2Hopf::schur_matrix(0.0);
        let post = Cause2Hopf::schur_matrix(1.0);
        let into_dyn = |m: Matrix2<f64>| {
            DMatrix::from_fn(2, 2, |r, c| m[(r, c)])
        };
        let eig_pre = eigenvalues(&into_dyn(pre));
        let eig_post = eigenvalues(&into_dyn(post));
        for e in &eig_pre {
            assert_relative_eq!(e.re, -0.5, epsilon = 1e-12);
            assert_relative_eq!(e.im.abs(), 0.7, epsilon = 1e-12);
        }
        for e in &eig_post {
            assert_relative_eq!(e.re, 0.3, epsilon = 1e-12);
            assert_relative_eq!(e.im.abs(), 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn cause2_equilibrium_zeroes_fast_and_algebraic_rows() {
        let m = Cause2Hopf::new(0.2, 0.0, 0.5);
        let s = m.initial_state(1.0);
        let r = m.residuals(&s).unwrap();
        assert!(r.f_norm() < 1e-12);
        assert!(r.g_norm() < 1e-12);
    }

    #[test]
    fn cause2_mode_flips_once_below_threshold() {
        let m = Cause2Hopf::new(0.2, 0.0, 0.5);
        let mut s = m.initial_state(1.0);
        let up = m.discrete_update(&s, 0.0);
        assert!(!up.changed);
        s.zc[0] = 0.49;
        let up = m.discrete_update(&s, 3.5);
        assert!(up.changed && up.dynamics_changed);
        assert_eq!(up.zd[0], 1.0);
    }
}
