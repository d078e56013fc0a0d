//! Residual vectors, partitioned Jacobians, the finite-difference oracle and
//! the Schur complement of the algebraic block.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::DynamicModel;
use crate::sparse::SparseBlock;
use crate::state::PartitionedState;

/// Inverse condition number below which the algebraic block counts as
/// numerically singular.
pub const SINGULARITY_TOLERANCE: f64 = 1e-10;

/// Evaluated residuals, split by part.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub hc: nalgebra::DVector<f64>,
    pub f: nalgebra::DVector<f64>,
    pub g: nalgebra::DVector<f64>,
}

impl ResidualVector {
    pub fn zeros(n_zc: usize, n_x: usize, n_g: usize) -> Self {
        Self {
            hc: nalgebra::DVector::zeros(n_zc),
            f: nalgebra::DVector::zeros(n_x),
            g: nalgebra::DVector::zeros(n_g),
        }
    }

    // Empty-vector amax panics in nalgebra; guard all three norms.
    fn amax_or_zero(v: &nalgebra::DVector<f64>) -> f64 {
        if v.is_empty() {
            0.0
        } else {
            v.amax()
        }
    }

    pub fn f_norm(&self) -> f64 {
        Self::amax_or_zero(&self.f)
    }

    pub fn g_norm(&self) -> f64 {
        Self::amax_or_zero(&self.g)
    }

    pub fn hc_norm(&self) -> f64 {
        Self::amax_or_zero(&self.hc)
    }

    /// Infinity norm over every part.
    pub fn max_norm(&self) -> f64 {
        self.f_norm().max(self.g_norm()).max(self.hc_norm())
    }
}

/// The nine Jacobian blocks of the model residuals over (x, y, z_c),
/// evaluated at one state.
#[derive(Debug, Clone)]
pub struct JacobianBundle {
    pub dx_f: SparseBlock,
    pub dy_f: SparseBlock,
    pub dzc_f: SparseBlock,
    pub dx_g: SparseBlock,
    pub dy_g: SparseBlock,
    pub dzc_g: SparseBlock,
    pub dx_hc: SparseBlock,
    pub dy_hc: SparseBlock,
    pub dzc_hc: SparseBlock,
    /// The state the blocks were evaluated at.
    pub at: PartitionedState,
}

impl JacobianBundle {
    pub fn empty(n_zc: usize, n_x: usize, n_y: usize, n_g: usize, at: PartitionedState) -> Self {
        Self {
            dx_f: SparseBlock::new(n_x, n_x),
            dy_f: SparseBlock::new(n_x, n_y),
            dzc_f: SparseBlock::new(n_x, n_zc),
            dx_g: SparseBlock::new(n_g, n_x),
            dy_g: SparseBlock::new(n_g, n_y),
            dzc_g: SparseBlock::new(n_g, n_zc),
            dx_hc: SparseBlock::new(n_zc, n_x),
            dy_hc: SparseBlock::new(n_zc, n_y),
            dzc_hc: SparseBlock::new(n_zc, n_zc),
            at,
        }
    }

    pub fn n_x(&self) -> usize {
        self.dx_f.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.dy_f.ncols()
    }
    pub fn n_zc(&self) -> usize {
        self.dzc_f.ncols()
    }
    pub fn n_g(&self) -> usize {
        self.dx_g.nrows()
    }

    /// The algebraic block `[[D_x f, D_y f], [D_x g, D_y g]]` whose
    /// eigenvalues classify constraint-manifold points.
    pub fn algebraic_block(&self) -> DMatrix<f64> {
        let (nx, ny, ng) = (self.n_x(), self.n_y(), self.n_g());
        let mut m = DMatrix::zeros(nx + ng, nx + ny);
        self.dx_f.add_into(&mut m, 0, 0);
        self.dy_f.add_into(&mut m, 0, nx);
        self.dx_g.add_into(&mut m, nx, 0);
        self.dy_g.add_into(&mut m, nx, nx);
        m
    }

    /// Inverse condition number of `D_y g` (0 when exactly singular).
    pub fn dyg_inverse_condition(&self) -> f64 {
        inverse_condition(&self.dy_g.to_dense())
    }
}

/// Smallest-over-largest singular value; 0 for an exactly singular or
/// degenerate matrix.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Schur complement `D_x f - D_y f (D_y g)^{-1} D_x g`.
///
/// Fails when `D_y g` is numerically singular; callers treat that as a
/// singular-manifold signal.
pub fn schur_complement(j: &JacobianBundle) -> Result<DMatrix<f64>> {
    let dyg = j.dy_g.to_dense();
    if dyg.nrows() != dyg.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "D_y g is {}x{}, expected square",
            dyg.nrows(),
            dyg.ncols()
        )));
    }
    let dxf = j.dx_f.to_dense();
    if dyg.nrows() == 0 {
        return Ok(dxf);
    }
    let inv_cond = inverse_condition(&dyg);
    if inv_cond < SINGULARITY_TOLERANCE {
        return Err(Error::SingularAlgebraicBlock { inv_cond });
    }
    let lu = dyg.lu();
    let dxg = j.dx_g.to_dense();
    let solved = lu
        .solve(&dxg)
        .ok_or(Error::SingularAlgebraicBlock { inv_cond })?;
    Ok(dxf - j.dy_f.to_dense() * solved)
}

/// Sum every device contribution plus the network equations into
/// `(f, g, h_c)`. Pure function of the state.
pub fn assemble_residuals(
    sys: &crate::system::PowerSystem,
    state: &PartitionedState,
) -> Result<ResidualVector> {
    let layout = sys.layout();
    if !state.matches_layout(layout) {
        return Err(Error::DimensionMismatch(format!(
            "state ({}, {}, {}, {}) vs layout ({}, {}, {}, {})",
            state.zc.len(),
            state.zd.len(),
            state.x.len(),
            state.y.len(),
            layout.n_zc(),
            layout.n_zd(),
            layout.n_x(),
            layout.n_y()
        )));
    }
    let mut out = ResidualVector::zeros(layout.n_zc(), layout.n_x(), layout.n_g);

    let net = crate::system::NetworkEquations::new(sys, state)?;
    net.residuals(state, &mut out.g);

    for gen in &sys.generators {
        crate::system::apply_contribution(&gen.contribute_residuals(state), &mut out);
    }
    for load in &sys.loads {
        crate::system::apply_contribution(&load.contribute_residuals(state), &mut out);
    }

    for (i, v) in out.f.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteResidual {
                variable: layout.x_names[i].clone(),
            });
        }
    }
    for (i, v) in out.hc.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteResidual {
                variable: layout.zc_names[i].clone(),
            });
        }
    }
    for (i, v) in out.g.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteResidual {
                variable: crate::model::DynamicModel::g_row_name(sys, i),
            });
        }
    }
    Ok(out)
}

/// Analytic Jacobian blocks of [`assemble_residuals`] at `state`.
pub fn assemble_jacobian(
    sys: &crate::system::PowerSystem,
    state: &PartitionedState,
) -> Result<JacobianBundle> {
    let layout = sys.layout();
    if !state.matches_layout(layout) {
        return Err(Error::DimensionMismatch(
            "state does not match system layout".into(),
        ));
    }
    let mut bundle = JacobianBundle::empty(
        layout.n_zc(),
        layout.n_x(),
        layout.n_y(),
        layout.n_g,
        state.clone(),
    );

    let net = crate::system::NetworkEquations::new(sys, state)?;
    net.jacobian(state, &mut bundle.dy_g);

    for gen in &sys.generators {
        crate::system::apply_jacobian_contribution(&gen.contribute_jacobian(state), &mut bundle);
    }
    for load in &sys.loads {
        crate::system::apply_jacobian_contribution(&load.contribute_jacobian(state), &mut bundle);
    }
    Ok(bundle)
}

/// Central-difference Jacobian of the model residuals, column by column.
/// Second-order accurate in `step`; the oracle used to verify every
/// analytic Jacobian in the crate.
pub fn finite_difference_jacobian<M: DynamicModel>(
    model: &M,
    state: &PartitionedState,
    step: f64,
) -> Result<JacobianBundle> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let layout = model.layout();
    let (n_zc, n_x, n_y, n_g) = (layout.n_zc(), layout.n_x(), layout.n_y(), layout.n_g);
    let mut bundle = JacobianBundle::empty(n_zc, n_x, n_y, n_g, state.clone());

    let mut diff_column = |col_set: &mut dyn FnMut(&mut PartitionedState, f64),
                           col: usize,
                           fill: &mut dyn FnMut(&mut JacobianBundle, usize, &ResidualVector, f64)|
     -> Result<()> {
        let mut plus = state.clone();
        col_set(&mut plus, step);
        let rp = model.residuals(&plus)?;
        let mut minus = state.clone();
        col_set(&mut minus, -step);
        let rm = model.residuals(&minus)?;
        let inv = 1.0 / (2.0 * step);
        let diff = ResidualVector {
            hc: (&rp.hc - &rm.hc) * inv,
            f: (&rp.f - &rm.f) * inv,
            g: (&rp.g - &rm.g) * inv,
        };
        fill(&mut bundle, col, &diff, 0.0);
        Ok(())
    };

    for col in 0..n_x {
        diff_column(
            &mut |s, h| s.x[col] += h,
            col,
            &mut |b, c, d, _| {
                for (r, v) in d.f.iter().enumerate() {
                    b.dx_f.push(r, c, *v);
                }
                for (r, v) in d.g.iter().enumerate() {
                    b.dx_g.push(r, c, *v);
                }
                for (r, v) in d.hc.iter().enumerate() {
                    b.dx_hc.push(r, c, *v);
                }
            },
        )?;
    }
    for col in 0..n_y {
        diff_column(
            &mut |s, h| s.y[col] += h,
            col,
            &mut |b, c, d, _| {
                for (r, v) in d.f.iter().enumerate() {
                    b.dy_f.push(r, c, *v);
                }
                for (r, v) in d.g.iter().enumerate() {
                    b.dy_g.push(r, c, *v);
                }
                for (r, v) in d.hc.iter().enumerate() {
                    b.dy_hc.push(r, c, *v);
                }
            },
        )?;
    }
    for col in 0..n_zc {
        diff_column(
            &mut |s, h| s.zc[col] += h,
            col,
            &mut |b, c, d, _| {
                for (r, v) in d.f.iter().enumerate() {
                    b.dzc_f.push(r, c, *v);
                }
                for (r, v) in d.g.iter().enumerate() {
                    b.dzc_g.push(r, c, *v);
                }
                for (r, v) in d.hc.iter().enumerate() {
                    b.dzc_hc.push(r, c, *v);
                }
            },
        )?;
    }
    Ok(bundle)
}

/// Largest relative elementwise deviation between two bundles'
/// corresponding blocks, scaled by the larger block magnitude.
pub fn jacobian_deviation(a: &JacobianBundle, b: &JacobianBundle) -> f64 {
    let pairs = [
        (&a.dx_f, &b.dx_f),
        (&a.dy_f, &b.dy_f),
        (&a.dzc_f, &b.dzc_f),
        (&a.dx_g, &b.dx_g),
        (&a.dy_g, &b.dy_g),
        (&a.dzc_g, &b.dzc_g),
        (&a.dx_hc, &b.dx_hc),
        (&a.dy_hc, &b.dy_hc),
        (&a.dzc_hc, &b.dzc_hc),
    ];
    let mut worst: f64 = 0.0;
    for (pa, pb) in pairs {
        if pa.nrows() == 0 || pa.ncols() == 0 {
            continue;
        }
        let da = pa.to_dense();
        let db = pb.to_dense();
        let scale = da.amax().max(db.amax()).max(1.0);
        let dev = (&da - &db).amax() / scale;
        worst = worst.max(dev);
    }
    worst
}

/// Eigenvalues of a real matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::PartitionLayout;
    use approx::assert_relative_eq;

    /// Scalar toy model with f(x) = x^2 as its only (fast) residual.
    #[derive(Clone)]
    struct Square {
        layout: PartitionLayout,
    }

    impl Square {
        fn new() -> Self {
            Self {
                layout: PartitionLayout {
                    zc_names: vec![],
                    zd_names: vec![],
                    x_names: vec!["x".into()],
                    y_names: vec![],
                    n_g: 0,
                },
            }
        }
    }

    impl DynamicModel for Square {
        fn name(&self) -> &str {
            "square"
        }
        fn layout(&self) -> &PartitionLayout {
            &self.layout
        }
        fn epsilon(&self) -> f64 {
            1.0
        }
        fn residuals(&self, state: &PartitionedState) -> Result<ResidualVector> {
            let mut r = ResidualVector::zeros(0, 1, 0);
            r.f[0] = state.x[0] * state.x[0];
            Ok(r)
        }
        fn jacobian(&self, state: &PartitionedState) -> Result<JacobianBundle> {
            let mut b = JacobianBundle::empty(0, 1, 0, 0, state.clone());
            b.dx_f.push(0, 0, 2.0 * state.x[0]);
            Ok(b)
        }
        fn discrete_update(&self, state: &PartitionedState, _tau: f64) -> crate::model::DiscreteUpdate {
            crate::model::DiscreteUpdate::unchanged(state.zd.clone())
        }
        fn apply_contingency_event(&self, _ev: &crate::grid::ContingencyEvent) -> Result<Self> {
            Err(Error::Structure("no topology".into()))
        }
    }

    #[test]
    fn central_difference_on_square() {
        let m = Square::new();
        let mut s = PartitionedState::zeros(m.layout(), 1.0);
        s.x[0] = 3.0;
        let fd = finite_difference_jacobian(&m, &s, 1e-5).unwrap();
        assert_relative_eq!(fd.dx_f.to_dense()[(0, 0)], 6.0, epsilon = 1e-8);
    }

    #[test]
    fn halving_step_reduces_error_quadratically() {
        // f(x) = x^2 has zero third derivative, so use a cubic via a wrapper
        // state value: evaluate at x where truncation error dominates.
        #[derive(Clone)]
        struct Cubic {
            layout: PartitionLayout,
        }
        impl DynamicModel for Cubic {
            fn name(&self) -> &str {
                "cubic"
            }
            fn layout(&self) -> &PartitionLayout {
                &self.layout
            }
            fn epsilon(&self) -> f64 {
                1.0
            }
            fn residuals(&self, state: &PartitionedState) -> Result<ResidualVector> {
                let mut r = ResidualVector::zeros(0, 1, 0);
                r.f[0] = state.x[0].powi(5);
                Ok(r)
            }
            fn jacobian(&self, state: &PartitionedState) -> Result<JacobianBundle> {
                let mut b = JacobianBundle::empty(0, 1, 0, 0, state.clone());
                b.dx_f.push(0, 0, 5.0 * state.x[0].powi(4));
                Ok(b)
            }
            fn discrete_update(
                &self,
                state: &PartitionedState,
                _tau: f64,
            ) -> crate::model::DiscreteUpdate {
                crate::model::DiscreteUpdate::unchanged(state.zd.clone())
            }
            fn apply_contingency_event(&self, _ev: &crate::grid::ContingencyEvent) -> Result<Self> {
                Err(Error::Structure("no topology".into()))
            }
        }
        let m = Cubic {
            layout: PartitionLayout {
                zc_names: vec![],
                zd_names: vec![],
                x_names: vec!["x".into()],
                y_names: vec![],
                n_g: 0,
            },
        };
        let mut s = PartitionedState::zeros(m.layout(), 1.0);
        s.x[0] = 1.3;
        let exact = 5.0 * 1.3_f64.powi(4);
        let err_at = |h: f64| {
            let fd = finite_difference_jacobian(&m, &s, h).unwrap();
            (fd.dx_f.to_dense()[(0, 0)] - exact).abs()
        };
        let e1 = err_at(1e-3);
        let e2 = err_at(5e-4);
        let ratio = e1 / e2;
        assert!(
            (2.5..6.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio}"
        );
    }

    #[test]
    fn schur_hand_computed_2x2() {
        // D_xf = [[-1]], D_yf = [[1]], D_xg = [[2]], D_yg = [[-1]]
        // -> -1 - (1 * (-1)^-1 * 2) = 1
        let layout = PartitionLayout {
            zc_names: vec![],
            zd_names: vec![],
            x_names: vec!["x".into()],
            y_names: vec!["y".into()],
            n_g: 1,
        };
        let at = PartitionedState::zeros(&layout, 1.0);
        let mut b = JacobianBundle::empty(0, 1, 1, 1, at);
        b.dx_f.push(0, 0, -1.0);
        b.dy_f.push(0, 0, 1.0);
        b.dx_g.push(0, 0, 2.0);
        b.dy_g.push(0, 0, -1.0);
        let s = schur_complement(&b).unwrap();
        assert_relative_eq!(s[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn schur_decoupled_equals_dxf() {
        let layout = PartitionLayout {
            zc_names: vec![],
            zd_names: vec![],
            x_names: vec!["x".into()],
            y_names: vec!["y".into()],
            n_g: 1,
        };
        let at = PartitionedState::zeros(&layout, 1.0);
        let mut b = JacobianBundle::empty(0, 1, 1, 1, at);
        b.dx_f.push(0, 0, -3.5);
        b.dx_g.push(0, 0, 2.0);
        b.dy_g.push(0, 0, 1.0);
        let s = schur_complement(&b).unwrap();
        assert_relative_eq!(s[(0, 0)], -3.5, epsilon = 1e-14);
    }

    #[test]
    fn singular_dyg_rejected() {
        let layout = PartitionLayout {
            zc_names: vec![],
            zd_names: vec![],
            x_names: vec!["x".into()],
            y_names: vec!["y".into()],
            n_g: 1,
        };
        let at = PartitionedState::zeros(&layout, 1.0);
        let b = JacobianBundle::empty(0, 1, 1, 1, at);
        // dy_g left empty -> exactly singular.
        assert!(matches!(
            schur_complement(&b),
            Err(Error::SingularAlgebraicBlock { .. })
        ));
    }
}
