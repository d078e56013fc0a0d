//! Dense Newton core shared by the step solvers.
//!
//! The iteration matrix is factorized once and reused (chord iteration)
//! until the owner asks for a refresh; a refresh is also forced when the
//! iteration converges too slowly with the stale factorization.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

pub struct NewtonWorkspace {
    lu: Option<LU<f64, Dyn, Dyn>>,
    /// Iterations of the last successful solve.
    pub last_iterations: usize,
}

impl NewtonWorkspace {
    pub fn new() -> Self {
        Self {
            lu: None,
            last_iterations: 0,
        }
    }

    pub fn invalidate(&mut self) {
        self.lu = None;
    }

    pub fn has_factorization(&self) -> bool {
        self.lu.is_some()
    }

    /// Solve `R(u) = 0` starting from `u`, overwriting it in place.
    ///
    /// `residual` evaluates R; `matrix` builds the full iteration matrix
    /// when a (re)factorization is needed. With `damped` set, each update
    /// direction is scaled by the multiplier from a small grid that
    /// minimizes the squared residual norm, which keeps the iteration from
    /// overshooting near ill-conditioned points.
    pub fn solve(
        &mut self,
        u: &mut DVector<f64>,
        residual: &mut dyn FnMut(&DVector<f64>) -> Result<DVector<f64>>,
        matrix: &mut dyn FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
        tolerance: f64,
        max_iterations: usize,
        damped: bool,
    ) -> Result<usize> {
        let mut r = residual(u)?;
        let mut best_norm = inf_norm(&r);
        if best_norm <= tolerance {
            self.last_iterations = 0;
            return Ok(0);
        }

        if self.lu.is_none() {
            self.refactorize(u, matrix)?;
        }

        for iter in 1..=max_iterations {
            let lu = self.lu.as_ref().expect("factorization present");
            let delta = lu.solve(&r).ok_or(Error::NewtonSingular)?;

            let mut step_scale = 1.0;
            if damped {
                let mut best_scale = 1.0;
                let mut best = f64::INFINITY;
                for &m in &[1.0, 0.5, 0.25, 0.125, 0.0625] {
                    let trial = &*u - &delta * m;
                    if let Ok(rt) = residual(&trial) {
                        let n = rt.norm_squared();
                        if n < best {
                            best = n;
                            best_scale = m;
                        }
                    }
                }
                step_scale = best_scale;
            }

            *u -= &delta * step_scale;
            r = residual(u)?;
            let norm = inf_norm(&r);
            if norm <= tolerance {
                self.last_iterations = iter;
                return Ok(iter);
            }

            // Slow or non-contracting progress: rebuild at the current
            // iterate (degenerates to full Newton when needed).
            if norm > 0.5 * best_norm {
                self.refactorize(u, matrix)?;
            }
            best_norm = best_norm.min(norm);
        }

        Err(Error::NewtonStagnation {
            residual: best_norm,
            iterations: max_iterations,
        })
    }

    fn refactorize(
        &mut self,
        u: &DVector<f64>,
        matrix: &mut dyn FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
    ) -> Result<()> {
        let m = matrix(u)?;
        let lu = m.lu();
        // nalgebra's LU does not signal singularity; probe with a solve.
        let probe = DVector::from_element(lu.l().nrows(), 1.0);
        if lu.solve(&probe).is_none() {
            return Err(Error::NewtonSingular);
        }
        self.lu = Some(lu);
        Ok(())
    }
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_quadratic_converges_to_nearest_branch() {
        // 0 = 4 - x^2 from guess 1 lands on +2.
        let mut ws = NewtonWorkspace::new();
        let mut u = DVector::from_vec(vec![1.0]);
        let iters = ws
            .solve(
                &mut u,
                &mut |v| Ok(DVector::from_vec(vec![4.0 - v[0] * v[0]])),
                &mut |v| Ok(DMatrix::from_vec(1, 1, vec![-2.0 * v[0]])),
                1e-12,
                50,
                false,
            )
            .unwrap();
        assert!(iters > 0);
        assert_relative_eq!(u[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn exact_root_returns_zero_iterations() {
        let mut ws = NewtonWorkspace::new();
        let mut u = DVector::from_vec(vec![2.0]);
        let iters = ws
            .solve(
                &mut u,
                &mut |v| Ok(DVector::from_vec(vec![4.0 - v[0] * v[0]])),
                &mut |v| Ok(DMatrix::from_vec(1, 1, vec![-2.0 * v[0]])),
                1e-12,
                50,
                true,
            )
            .unwrap();
        assert_eq!(iters, 0);
    }

    #[test]
    fn singular_matrix_reported() {
        let mut ws = NewtonWorkspace::new();
        let mut u = DVector::from_vec(vec![0.0]);
        let err = ws.solve(
            &mut u,
            &mut |_| Ok(DVector::from_vec(vec![1.0])),
            &mut |_| Ok(DMatrix::from_vec(1, 1, vec![0.0])),
            1e-12,
            10,
            false,
        );
        assert!(matches!(err, Err(Error::NewtonSingular)));
    }
}
