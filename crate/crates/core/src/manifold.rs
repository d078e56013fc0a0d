//! Classification of constraint-manifold points.
//!
//! A point with `f = 0, g = 0` is classified by the eigenvalues of the
//! algebraic block `[[D_x f, D_y f], [D_x g, D_y g]]`: all real parts
//! negative puts it on the stable component; k eigenvalues with positive
//! real part make it a type-k component; a numerically singular block makes
//! it a singular point. When `D_y g` is well conditioned the Schur
//! complement `D_x f - D_y f (D_y g)^{-1} D_x g` is also examined: all of
//! its eigenvalues in the open left half plane means the point is an
//! asymptotically stable equilibrium of the corresponding fast model.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dae::{eigenvalues, inverse_condition, schur_complement, JacobianBundle, SINGULARITY_TOLERANCE};
use crate::error::{Error, Result};
use crate::model::DynamicModel;
use crate::sim::constraint::solve_constraint;
use crate::sim::Trajectory;
use crate::state::PartitionedState;

/// Real parts within this band of zero are neither stable nor unstable;
/// such points are reported marginal and excluded from the stable sets.
pub const EIGENVALUE_MARGIN: f64 = 1e-8;

/// Residual bound for a point to count as on the manifold.
pub const MANIFOLD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ManifoldVerdict {
    /// All algebraic-block eigenvalues strictly in the left half plane.
    StableComponent,
    /// Exactly `k` eigenvalues with real part beyond the margin.
    TypeK { k: usize },
    /// Algebraic block numerically singular.
    Singular,
    /// Some eigenvalue sits inside the +/- margin band.
    Marginal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifoldClassification {
    pub verdict: ManifoldVerdict,
    /// Eigenvalues of the full algebraic block, as (re, im) pairs sorted by
    /// real part descending.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Eigenvalues of the Schur complement when `D_y g` is nonsingular.
    pub schur_eigenvalues: Option<Vec<(f64, f64)>>,
    /// The point is an asymptotically stable equilibrium of the fast model
    /// (all Schur eigenvalues in the open left half plane).
    pub in_gamma_s: bool,
    /// Inverse condition number of the algebraic block.
    pub inverse_condition: f64,
}

fn sorted_pairs(eigs: &[Complex64]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = eigs.iter().map(|e| (e.re, e.im)).collect();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.partial_cmp(&a.1).unwrap()));
    v
}

fn classify_spectrum(eigs: &[Complex64]) -> ManifoldVerdict {
    let marginal = eigs.iter().any(|e| e.re.abs() <= EIGENVALUE_MARGIN);
    if marginal {
        return ManifoldVerdict::Marginal;
    }
    let k = eigs.iter().filter(|e| e.re > EIGENVALUE_MARGIN).count();
    if k == 0 {
        ManifoldVerdict::StableComponent
    } else {
        ManifoldVerdict::TypeK { k }
    }
}

/// True iff the inverse condition number of the algebraic block is below
/// `tolerance`; the estimate comes back alongside.
pub fn is_singular(j: &JacobianBundle, tolerance: f64) -> (bool, f64) {
    let inv_cond = inverse_condition(&j.algebraic_block());
    (inv_cond < tolerance, inv_cond)
}

/// Classify the constraint-manifold point at which `j` was evaluated.
///
/// The caller vouches that the point satisfies `f = 0, g = 0` to manifold
/// tolerance; use [`classify_state`] to have that checked.
pub fn classify_constraint_point(j: &JacobianBundle) -> ManifoldClassification {
    let block = j.algebraic_block();
    let inv_cond = inverse_condition(&block);
    if inv_cond < SINGULARITY_TOLERANCE {
        return ManifoldClassification {
            verdict: ManifoldVerdict::Singular,
            eigenvalues: sorted_pairs(&eigenvalues(&block)),
            schur_eigenvalues: None,
            in_gamma_s: false,
            inverse_condition: inv_cond,
        };
    }

    let eigs = eigenvalues(&block);
    let verdict = classify_spectrum(&eigs);

    let (schur_eigenvalues, in_gamma_s) = match schur_complement(j) {
        Ok(s) => {
            let se = eigenvalues(&s);
            let all_negative = se.iter().all(|e| e.re < -EIGENVALUE_MARGIN);
            (Some(sorted_pairs(&se)), all_negative)
        }
        Err(_) => (None, false),
    };

    ManifoldClassification {
        verdict,
        eigenvalues: sorted_pairs(&eigs),
        schur_eigenvalues,
        in_gamma_s,
        inverse_condition: inv_cond,
    }
}

/// Evaluate the Jacobian at `state` and classify, first checking the
/// manifold residuals.
pub fn classify_state<M: DynamicModel>(
    model: &M,
    state: &PartitionedState,
) -> Result<ManifoldClassification> {
    let r = model.residuals(state)?;
    let res = r.f_norm().max(r.g_norm());
    if res > MANIFOLD_TOLERANCE {
        return Err(Error::OffManifold {
            residual: res,
            tolerance: MANIFOLD_TOLERANCE,
        });
    }
    Ok(classify_constraint_point(&model.jacobian(state)?))
}

/// A solved fast/algebraic equilibrium at frozen slow state. Despite the
/// name, the solved point may be unstable; `classification` records its
/// type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransientSep {
    pub state: PartitionedState,
    pub residual: f64,
    pub iterations: usize,
    pub classification: ManifoldClassification,
}

impl TransientSep {
    /// Count of Schur eigenvalues with positive real part (0 for a true SEP).
    pub fn unstable_type(&self) -> usize {
        match &self.classification.schur_eigenvalues {
            Some(se) => se.iter().filter(|(re, _)| *re > EIGENVALUE_MARGIN).count(),
            None => match self.classification.verdict {
                ManifoldVerdict::TypeK { k } => k,
                _ => 0,
            },
        }
    }

    pub fn is_stable(&self) -> bool {
        self.classification.in_gamma_s
    }
}

/// Newton solve of `0 = f, 0 = g` at the slow state frozen in `guess`;
/// the returned equilibrium carries its classification.
pub fn solve_transient_sep<M: DynamicModel>(
    model: &M,
    guess: &PartitionedState,
) -> Result<TransientSep> {
    let sol = solve_constraint(model, guess, 1e-10, 80)?;
    let mut state = guess.clone();
    state.x = sol.x;
    state.y = sol.y;
    let classification = classify_constraint_point(&model.jacobian(&state)?);
    Ok(TransientSep {
        state,
        residual: sol.residual,
        iterations: sol.iterations,
        classification,
    })
}

/// Scan a trajectory for singularity crossings of the algebraic block:
/// instants where the inverse condition number crosses `tolerance`,
/// located by bisection between bracketing samples.
pub fn detect_singularity_crossing<M: DynamicModel>(
    model: &M,
    trajectory: &Trajectory,
    tolerance: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut crossings = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for (t, s) in &trajectory.samples {
        let j = model.jacobian(s)?;
        let (_, inv_cond) = is_singular(&j, tolerance);
        if let Some((tp, cp)) = prev {
            let was = cp < tolerance;
            let now = inv_cond < tolerance;
            if was != now {
                // Bisect on the interpolated states.
                let (mut lo, mut hi) = (tp, *t);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let sm = trajectory
                        .state_at(mid)
                        .expect("mid point inside trajectory");
                    let jm = model.jacobian(&sm)?;
                    let (_, cm) = is_singular(&jm, tolerance);
                    if (cm < tolerance) == was {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tc = 0.5 * (lo + hi);
                let sc = trajectory.state_at(tc).expect("crossing inside trajectory");
                let (_, cc) = is_singular(&model.jacobian(&sc)?, tolerance);
                crossings.push((tc, cc));
            }
        }
        prev = Some((*t, inv_cond));
    }
    Ok(crossings)
}

/// Eigenvector of `m` for the eigenvalue nearest `lambda`, by inverse
/// iteration with a complex shift. Returns the real part (normalized),
/// which spans the associated invariant plane together with the imaginary
/// part for complex pairs.
pub fn eigenvector_for(m: &DMatrix<f64>, lambda: Complex64) -> Option<DVector<f64>> {
    let n = m.nrows();
    if n == 0 {
        return None;
    }
    let shift = lambda + Complex64::new(1e-8, 1e-8);
    let mc = DMatrix::from_fn(n, n, |r, c| Complex64::new(m[(r, c)], 0.0))
        - DMatrix::from_diagonal(&DVector::from_element(n, shift));
    let lu = mc.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 / (i + 1) as f64, 0.0));
    for _ in 0..8 {
        let w = lu.solve(&v)?;
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        v = w / Complex64::new(norm, 0.0);
    }
    let re = DVector::from_fn(n, |i, _| v[i].re);
    let norm = re.norm();
    if norm > 1e-12 {
        Some(re / norm)
    } else {
        let im = DVector::from_fn(n, |i, _| v[i].im);
        let norm = im.norm();
        (norm > 1e-12).then(|| im / norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::PartitionLayout;
    use approx::assert_relative_eq;

    fn bundle_1x1(dxf: f64, dyf: f64, dxg: f64, dyg: f64) -> JacobianBundle {
        let layout = PartitionLayout {
            zc_names: vec![],
            zd_names: vec![],
            x_names: vec!["x".into()],
            y_names: vec!["y".into()],
            n_g: 1,
        };
        let at = PartitionedState::zeros(&layout, 1.0);
        let mut b = JacobianBundle::empty(0, 1, 1, 1, at);
        b.dx_f.push(0, 0, dxf);
        b.dy_f.push(0, 0, dyf);
        b.dx_g.push(0, 0, dxg);
        b.dy_g.push(0, 0, dyg);
        b
    }

    #[test]
    fn diagonal_negative_is_stable_and_in_gamma_s() {
        let b = bundle_1x1(-1.0, 0.0, 0.0, -1.0);
        let c = classify_constraint_point(&b);
        assert_eq!(c.verdict, ManifoldVerdict::StableComponent);
        assert!(c.in_gamma_s);
    }

    #[test]
    fn zero_dx_row_is_singular() {
        // g = z - x^2 at x = 0: the fast row of the block vanishes.
        let layout = PartitionLayout {
            zc_names: vec!["z".into()],
            zd_names: vec![],
            x_names: vec!["x".into()],
            y_names: vec![],
            n_g: 0,
        };
        let at = PartitionedState::zeros(&layout, 1.0);
        let mut b = JacobianBundle::empty(1, 1, 0, 0, at);
        b.dx_f.push(0, 0, 0.0);
        b.dzc_f.push(0, 0, 1.0);
        let c = classify_constraint_point(&b);
        assert_eq!(c.verdict, ManifoldVerdict::Singular);
        assert!(!c.in_gamma_s);
    }

    #[test]
    fn constructed_type2_spectrum() {
        // Schur eigenvalues +0.3 +/- 0.7i by construction.
        let layout = PartitionLayout {
            zc_names: vec![],
            zd_names: vec![],
            x_names: vec!["x1".into(), "x2".into()],
            y_names: vec!["y".into()],
            n_g: 1,
        };
        let at = PartitionedState::zeros(&layout, 1.0);
        let mut b = JacobianBundle::empty(0, 2, 1, 1, at);
        // A = [[0.05, 0.7], [-0.95, 0.3]], B = [0.5; 0.5], C = [0.5, 0], D = -1
        b.dx_f.push(0, 0, 0.05);
        b.dx_f.push(0, 1, 0.7);
        b.dx_f.push(1, 0, -0.95);
        b.dx_f.push(1, 1, 0.3);
        b.dy_f.push(0, 0, 0.5);
        b.dy_f.push(1, 0, 0.5);
        b.dx_g.push(0, 0, 0.5);
        b.dy_g.push(0, 0, -1.0);
        let c = classify_constraint_point(&b);
        let se = c.schur_eigenvalues.expect("dyg nonsingular");
        assert_eq!(se.len(), 2);
        for (re, im) in &se {
            assert_relative_eq!(*re, 0.3, epsilon = 1e-10);
            assert_relative_eq!(im.abs(), 0.7, epsilon = 1e-10);
        }
        assert!(!c.in_gamma_s);
        let k = se.iter().filter(|(re, _)| *re > EIGENVALUE_MARGIN).count();
        assert_eq!(k, 2);
    }

    #[test]
    fn is_singular_examples() {
        // Identity block: regular with condition 1.
        let b = bundle_1x1(1.0, 0.0, 0.0, 1.0);
        let (sing, cond) = is_singular(&b, 1e-10);
        assert!(!sing);
        assert_relative_eq!(cond, 1.0);

        // Rank-deficient [[1,1],[1,1]].
        let b = bundle_1x1(1.0, 1.0, 1.0, 1.0);
        let (sing, cond) = is_singular(&b, 1e-10);
        assert!(sing, "inverse condition {cond}");
    }

    #[test]
    fn near_singular_under_tolerance() {
        // Block with singular values {1, 1e-12}: inverse condition 1e-12.
        let b = bundle_1x1(1.0, 0.0, 0.0, 1e-12);
        let (sing, cond) = is_singular(&b, 1e-10);
        assert!(sing);
        assert!(cond < 1e-10);
    }

    #[test]
    fn eigenvalue_multiset_invariant_under_permutation() {
        // Swap the two fast states of the type-2 block: same spectrum.
        let layout = PartitionLayout {
            zc_names: vec![],
            zd_names: vec![],
            x_names: vec!["x1".into(), "x2".into()],
            y_names: vec!["y".into()],
            n_g: 1,
        };
        let at = PartitionedState::zeros(&layout, 1.0);
        let mut build = |perm: bool| {
            let mut b = JacobianBundle::empty(0, 2, 1, 1, at.clone());
            let idx = |i: usize| if perm { 1 - i } else { i };
            let a = [[0.05, 0.7], [-0.95, 0.3]];
            for r in 0..2 {
                for c in 0..2 {
                    b.dx_f.push(idx(r), idx(c), a[r][c]);
                }
                b.dy_f.push(idx(r), 0, 0.5);
            }
            b.dx_g.push(0, idx(0), 0.5);
            b.dy_g.push(0, 0, -1.0);
            classify_constraint_point(&b)
        };
        let a = build(false);
        let b = build(true);
        let mut ea = a.eigenvalues.clone();
        let mut eb = b.eigenvalues.clone();
        ea.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in ea.iter().zip(eb.iter()) {
            assert_relative_eq!(x.0, y.0, epsilon = 1e-9);
            assert_relative_eq!(x.1.abs(), y.1.abs(), epsilon = 1e-9);
        }
    }

    #[test]
    fn inverse_iteration_recovers_unstable_direction() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0]);
        let v = eigenvector_for(&m, Complex64::new(2.0, 0.0)).unwrap();
        assert_relative_eq!(v[0].abs(), 1.0, epsilon = 1e-8);
        assert!(v[1].abs() < 1e-8);
    }
}
