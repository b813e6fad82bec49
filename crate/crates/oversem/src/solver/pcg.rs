//! Preconditioned conjugate gradients with deterministic fixed-order
//! reductions. Residual history is recorded for diagnostics and tests.

use crate::comm::Comm;
use crate::error::{Error, Result};

use super::helmholtz::LevelOperator;

/// Preconditioner interface for the f64 outer loop.
pub trait Precond {
    fn apply(&self, r: &[f64], z: &mut [f64], comm: &Comm) -> Result<()>;
    fn name(&self) -> &str {
        "none"
    }
}

pub struct IdentityPrecond;

impl Precond for IdentityPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64], _comm: &Comm) -> Result<()> {
        z.copy_from_slice(r);
        Ok(())
    }
    fn name(&self) -> &str {
        "none"
    }
}

/// Diagonal (Jacobi) preconditioner from the operator's assembled diagonal.
pub struct JacobiPrecond {
    inv_diag: Vec<f64>,
}

impl JacobiPrecond {
    pub fn new(op: &LevelOperator<f64>) -> Self {
        JacobiPrecond {
            inv_diag: op.diag.iter().map(|&d| 1.0 / d).collect(),
        }
    }
}

impl Precond for JacobiPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64], _comm: &Comm) -> Result<()> {
        for i in 0..r.len() {
            z[i] = self.inv_diag[i] * r[i];
        }
        Ok(())
    }
    fn name(&self) -> &str {
        "jacobi"
    }
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// 2-norm residual per iteration (gates convergence; may oscillate)
    pub residuals: Vec<f64>,
    /// per-iteration A-norm error decrements alpha_k * (r,z)_k; these are
    /// nonnegative for an SPD pair, which is exactly the statement that
    /// the error history is monotone in the preconditioned (energy) norm
    pub energy_drops: Vec<f64>,
}

impl SolveStats {
    /// ||x_final - x_k||_A, exact from the A-orthogonality of search
    /// directions: a monotone non-increasing convergence history.
    pub fn energy_history(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.energy_drops.len() + 1];
        for k in (0..self.energy_drops.len()).rev() {
            out[k] = out[k + 1] + self.energy_drops[k];
        }
        out.iter().map(|v| v.sqrt()).collect()
    }
}

/// Solve op x = b to a relative residual (vs ||b||). The initial guess in
/// `x` is used; zero iterations are reported when it already satisfies the
/// tolerance (projection initial guesses rely on this).
pub fn pcg(
    op: &LevelOperator<f64>,
    precond: &dyn Precond,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_it: usize,
    comm: &Comm,
) -> Result<SolveStats> {
    let n = op.n_slots();
    if b.len() != n || x.len() != n {
        return Err(Error::Shape("pcg length mismatch".into()));
    }
    let mut b = b.to_vec();
    op.zero_masked(&mut b);
    op.project_nullspace(&mut b, comm)?;
    op.zero_masked(x);
    if op.nullspace {
        op.project_nullspace(x, comm)?;
    }
    let bnorm = op.dot(&b, &b, comm)?.sqrt();
    let stop_abs = if bnorm > 0.0 { tol * bnorm } else { 0.0 };

    let mut r = vec![0.0; n];
    op.apply(x, &mut r, comm)?;
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rnorm = op.dot(&r, &r, comm)?.sqrt();
    let initial_residual = rnorm;
    let mut history = vec![rnorm];
    let mut energy_drops: Vec<f64> = Vec::new();
    if rnorm <= stop_abs || bnorm == 0.0 {
        return Ok(SolveStats {
            iterations: 0,
            converged: true,
            initial_residual,
            final_residual: rnorm,
            residuals: history,
            energy_drops,
        });
    }
    let mut z = vec![0.0; n];
    precond_apply(precond, op, &r, &mut z, comm)?;
    let mut p = z.clone();
    let mut rz = op.dot(&r, &z, comm)?;
    let mut ap = vec![0.0; n];
    let mut it = 0;
    while it < max_it {
        it += 1;
        op.apply(&p, &mut ap, comm)?;
        let pap = op.dot(&p, &ap, comm)?;
        if pap <= 0.0 {
            return Err(Error::Solver(format!(
                "operator not positive definite: p^T A p = {pap:.3e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        energy_drops.push(alpha * rz);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        crate::flops::add_fp64(4 * n as u64);
        rnorm = op.dot(&r, &r, comm)?.sqrt();
        history.push(rnorm);
        if rnorm <= stop_abs {
            break;
        }
        precond_apply(precond, op, &r, &mut z, comm)?;
        let rz_new = op.dot(&r, &z, comm)?;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        crate::flops::add_fp64(2 * n as u64);
    }
    if op.nullspace {
        op.project_nullspace(x, comm)?;
    }
    Ok(SolveStats {
        iterations: it,
        converged: rnorm <= stop_abs,
        initial_residual,
        final_residual: rnorm,
        residuals: history,
        energy_drops,
    })
}

fn precond_apply(
    precond: &dyn Precond,
    op: &LevelOperator<f64>,
    r: &[f64],
    z: &mut [f64],
    comm: &Comm,
) -> Result<()> {
    let _t = crate::runtime::stats::scoped("preconditioner");
    precond.apply(r, z, comm)?;
    op.zero_masked(z);
    if op.nullspace {
        op.project_nullspace(z, comm)?;
    }
    Ok(())
}
