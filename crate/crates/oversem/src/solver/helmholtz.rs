//! Matrix-free Helmholtz operator: h_mass * M + h_laplace * K under the
//! assembled (gather-scatter) inner product, with a Dirichlet mask and
//! optional constant nullspace handling for pure-Neumann problems.
//!
//! Generic over the scalar so p-multigrid levels can store geometry and run
//! smoothing in reduced precision.

use crate::comm::Comm;
use crate::error::{Error, Result};
use crate::la::MatG;
use crate::mesh::{Discretization, FaceTag, GsOp, MeshPartition, FACE_COUNT};
use crate::ref_element::{local_grad, local_grad_transpose_add, Dims};
use crate::scalar::Real;
use crate::tuning;
use std::sync::Arc;

/// Per-element coefficients: uniform or piecewise (conjugate heat
/// transfer uses different conductivities in fluid and solid elements).
#[derive(Debug, Clone)]
pub enum Coefficient {
    Uniform(f64),
    PerElement(Vec<f64>),
}

impl Coefficient {
    pub fn at(&self, elem: usize) -> f64 {
        match self {
            Coefficient::Uniform(c) => *c,
            Coefficient::PerElement(v) => v[elem],
        }
    }
}

/// Local slot indices of one element face (0:r- 1:r+ 2:s- 3:s+ 4:t- 5:t+).
pub fn face_nodes(d: Dims, face: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let (nr, ns, nt) = (d.nr, d.ns, d.nt);
    match face {
        0 | 1 => {
            let i = if face == 0 { 0 } else { nr - 1 };
            for k in 0..nt {
                for j in 0..ns {
                    out.push(d.idx(i, j, k));
                }
            }
        }
        2 | 3 => {
            let j = if face == 2 { 0 } else { ns - 1 };
            for k in 0..nt {
                for i in 0..nr {
                    out.push(d.idx(i, j, k));
                }
            }
        }
        _ => {
            let k = if face == 4 { 0 } else { nt - 1 };
            for j in 0..ns {
                for i in 0..nr {
                    out.push(d.idx(i, j, k));
                }
            }
        }
    }
    out
}

/// Build the constrained-dof mask for faces whose tag satisfies the
/// predicate, unioned across ranks (collective).
pub fn build_mask(
    mesh: &MeshPartition,
    disc: &Discretization,
    comm: &Comm,
    constrained: impl Fn(FaceTag) -> bool,
) -> Result<Vec<bool>> {
    let nodes_per = disc.nodes_per_element;
    let mut mask = vec![0.0f64; disc.n_slots()];
    for (ei, e) in mesh.elements.iter().enumerate() {
        for f in 0..FACE_COUNT {
            if constrained(e.boundary[f]) {
                for idx in face_nodes(disc.dims, f) {
                    mask[ei * nodes_per + idx] = 1.0;
                }
            }
        }
    }
    disc.gs.exchange(&mut mask, GsOp::Max, comm)?;
    Ok(mask.into_iter().map(|v| v > 0.5).collect())
}

/// The Helmholtz/Poisson operator at one discretization level.
pub struct LevelOperator<T: Real> {
    pub disc: Arc<Discretization>,
    deriv: MatG<T>,
    g: Vec<[Vec<T>; 6]>,
    mass: Vec<Vec<T>>,
    pub h_laplace: Coefficient,
    pub h_mass: Coefficient,
    pub mask: Vec<bool>,
    inv_mult: Vec<T>,
    pub diag: Vec<T>,
    pub nullspace: bool,
    dims: Dims,
}

pub type HelmholtzOp = LevelOperator<f64>;

impl<T: Real> LevelOperator<T> {
    pub fn new(
        disc: Arc<Discretization>,
        h_laplace: Coefficient,
        h_mass: Coefficient,
        mask: Vec<bool>,
        comm: &Comm,
    ) -> Result<Self> {
        let dims = disc.dims;
        let deriv = disc.basis.deriv.entries.cast::<T>();
        let mut g = Vec::with_capacity(disc.n_elements());
        let mut mass = Vec::with_capacity(disc.n_elements());
        for geom in &disc.geom {
            g.push(std::array::from_fn(|a| {
                geom.g[a].iter().map(|&v| T::from_f64(v)).collect()
            }));
            mass.push(geom.mass.iter().map(|&v| T::from_f64(v)).collect());
        }
        let inv_mult = disc
            .gs
            .inv_multiplicity()
            .iter()
            .map(|&v| T::from_f64(v))
            .collect();
        // pure Neumann with no mass term leaves the constants nullspace
        let nullspace = !mask.iter().any(|&m| m) && {
            match &h_mass {
                Coefficient::Uniform(c) => *c == 0.0,
                Coefficient::PerElement(v) => v.iter().all(|&c| c == 0.0),
            }
        };
        let mut op = LevelOperator {
            disc,
            deriv,
            g,
            mass,
            h_laplace,
            h_mass,
            mask,
            inv_mult,
            diag: Vec::new(),
            nullspace,
            dims,
        };
        op.diag = op.assemble_diagonal(comm)?;
        Ok(op)
    }

    pub fn n_slots(&self) -> usize {
        self.disc.n_slots()
    }

    pub fn comm_gs(&self) -> &crate::mesh::GatherScatter {
        &self.disc.gs
    }

    /// y = (h_mass M + h_laplace K) x, assembled and masked. Input copies
    /// of masked dofs are ignored (treated as zero).
    pub fn apply(&self, x: &[T], y: &mut [T], comm: &Comm) -> Result<()> {
        let nodes = self.dims.len();
        let n = self.n_slots();
        if x.len() != n || y.len() != n {
            return Err(Error::Shape("operator apply length mismatch".into()));
        }
        let mut xm: Vec<T> = x.to_vec();
        for (v, &m) in xm.iter_mut().zip(&self.mask) {
            if m {
                *v = T::ZERO;
            }
        }
        let fused = tuning::laplace_variant() == tuning::LAPLACE_FUSED;
        for v in y.iter_mut() {
            *v = T::ZERO;
        }
        for e in 0..self.disc.n_elements() {
            let lam = T::from_f64(self.h_laplace.at(e));
            let sig = T::from_f64(self.h_mass.at(e));
            let xe = &xm[e * nodes..(e + 1) * nodes];
            let ye = &mut y[e * nodes..(e + 1) * nodes];
            if fused {
                self.element_apply_fused(e, lam, sig, xe, ye)?;
            } else {
                self.element_apply_staged(e, lam, sig, xe, ye)?;
            }
        }
        self.gs_exchange_t(y, comm)?;
        for (v, &m) in y.iter_mut().zip(&self.mask) {
            if m {
                *v = T::ZERO;
            }
        }
        Ok(())
    }

    /// Staged variant: gradient pass, metric multiply, transpose pass.
    fn element_apply_staged(
        &self,
        e: usize,
        lam: T,
        sig: T,
        xe: &[T],
        ye: &mut [T],
    ) -> Result<()> {
        let d = self.dims;
        let (ur, us, ut, _) = local_grad(&self.deriv, xe, d)?;
        let len = d.len();
        let g = &self.g[e];
        let mut wr = vec![T::ZERO; len];
        let mut ws = vec![T::ZERO; len];
        let mut wt = vec![T::ZERO; len];
        for i in 0..len {
            wr[i] = lam * (g[0][i] * ur[i] + g[1][i] * us[i] + g[2][i] * ut[i]);
            ws[i] = lam * (g[1][i] * ur[i] + g[3][i] * us[i] + g[4][i] * ut[i]);
            wt[i] = lam * (g[2][i] * ur[i] + g[4][i] * us[i] + g[5][i] * ut[i]);
        }
        local_grad_transpose_add(&self.deriv, &wr, &ws, &wt, d, ye)?;
        let mass = &self.mass[e];
        for i in 0..len {
            ye[i] += sig * mass[i] * xe[i];
        }
        count_flops::<T>(21 * len as u64);
        Ok(())
    }

    /// Fused variant: identical arithmetic order per output value, the
    /// metric multiply folded into one pass over nodes.
    fn element_apply_fused(&self, e: usize, lam: T, sig: T, xe: &[T], ye: &mut [T]) -> Result<()> {
        let d = self.dims;
        let (ur, us, ut, _) = local_grad(&self.deriv, xe, d)?;
        let len = d.len();
        let g = &self.g[e];
        let mass = &self.mass[e];
        let mut wr = vec![T::ZERO; len];
        let mut ws = vec![T::ZERO; len];
        let mut wt = vec![T::ZERO; len];
        for i in 0..len {
            let (a, b, c) = (ur[i], us[i], ut[i]);
            wr[i] = lam * (g[0][i] * a + g[1][i] * b + g[2][i] * c);
            ws[i] = lam * (g[1][i] * a + g[3][i] * b + g[4][i] * c);
            wt[i] = lam * (g[2][i] * a + g[4][i] * b + g[5][i] * c);
            ye[i] += sig * mass[i] * xe[i];
        }
        local_grad_transpose_add(&self.deriv, &wr, &ws, &wt, d, ye)?;
        count_flops::<T>(21 * len as u64);
        Ok(())
    }

    /// Gather-scatter sum in this scalar type (exchange runs in f64).
    pub fn gs_exchange_t(&self, y: &mut [T], comm: &Comm) -> Result<()> {
        let mut buf: Vec<f64> = y.iter().map(|v| v.to_f64()).collect();
        self.disc.gs.exchange(&mut buf, GsOp::Sum, comm)?;
        for (o, v) in y.iter_mut().zip(buf) {
            *o = T::from_f64(v);
        }
        Ok(())
    }

    /// Assembled inner product (1/multiplicity weights, fixed-order
    /// reduction).
    pub fn dot(&self, u: &[T], v: &[T], comm: &Comm) -> Result<f64> {
        let mut local = 0.0;
        for i in 0..u.len() {
            local += (u[i] * v[i] * self.inv_mult[i]).to_f64();
        }
        count_flops::<T>(3 * u.len() as u64);
        comm.allreduce_scalar(local, crate::comm::ReduceOp::Sum)
    }

    /// Remove the constant component (pure-Neumann nullspace).
    pub fn project_nullspace(&self, u: &mut [T], comm: &Comm) -> Result<()> {
        if !self.nullspace {
            return Ok(());
        }
        let ones = vec![T::ONE; u.len()];
        let mean = self.dot(u, &ones, comm)? / self.dot(&ones, &ones, comm)?;
        let m = T::from_f64(mean);
        for v in u.iter_mut() {
            *v -= m;
        }
        Ok(())
    }

    pub fn zero_masked(&self, u: &mut [T]) {
        for (v, &m) in u.iter_mut().zip(&self.mask) {
            if m {
                *v = T::ZERO;
            }
        }
    }

    /// Assembled diagonal of the masked operator (1 at masked dofs).
    fn assemble_diagonal(&self, comm: &Comm) -> Result<Vec<T>> {
        let d = self.dims;
        let n1 = d.nr;
        let nodes = d.len();
        let mut diag = vec![T::ZERO; self.n_slots()];
        // column sums of squared derivative-matrix entries
        let mut dsq_col = vec![T::ZERO; n1 * n1];
        for m in 0..n1 {
            for i in 0..n1 {
                dsq_col[m * n1 + i] = self.deriv.at(m, i) * self.deriv.at(m, i);
            }
        }
        for e in 0..self.disc.n_elements() {
            let lam = T::from_f64(self.h_laplace.at(e));
            let sig = T::from_f64(self.h_mass.at(e));
            let g = &self.g[e];
            let mass = &self.mass[e];
            let de = &mut diag[e * nodes..(e + 1) * nodes];
            for k in 0..n1 {
                for j in 0..n1 {
                    for i in 0..n1 {
                        let idx = d.idx(i, j, k);
                        let mut s = T::ZERO;
                        for m in 0..n1 {
                            s += dsq_col[m * n1 + i] * g[0][d.idx(m, j, k)];
                            s += dsq_col[m * n1 + j] * g[3][d.idx(i, m, k)];
                            s += dsq_col[m * n1 + k] * g[5][d.idx(i, j, m)];
                        }
                        let dii = self.deriv.at(i, i);
                        let djj = self.deriv.at(j, j);
                        let dkk = self.deriv.at(k, k);
                        let two = T::from_f64(2.0);
                        s += two * dii * djj * g[1][idx];
                        s += two * dii * dkk * g[2][idx];
                        s += two * djj * dkk * g[4][idx];
                        de[idx] = lam * s + sig * mass[idx];
                    }
                }
            }
        }
        self.gs_exchange_t(&mut diag, comm)?;
        for (v, &m) in diag.iter_mut().zip(&self.mask) {
            if m {
                *v = T::ONE;
            }
        }
        Ok(diag)
    }

    /// Dense local element matrix by probing with unit vectors (used for
    /// the coarse-grid assembly, where elements are 2x2x2).
    pub fn element_matrix(&self, e: usize) -> Result<Vec<T>> {
        let nodes = self.dims.len();
        let lam = T::from_f64(self.h_laplace.at(e));
        let sig = T::from_f64(self.h_mass.at(e));
        let mut mat = vec![T::ZERO; nodes * nodes];
        let mut unit = vec![T::ZERO; nodes];
        let mut col = vec![T::ZERO; nodes];
        for j in 0..nodes {
            unit[j] = T::ONE;
            for v in col.iter_mut() {
                *v = T::ZERO;
            }
            self.element_apply_staged(e, lam, sig, &unit, &mut col)?;
            for i in 0..nodes {
                mat[i * nodes + j] = col[i];
            }
            unit[j] = T::ZERO;
        }
        Ok(mat)
    }

    /// Mass-weighted right-hand side from pointwise values: rhs = M f,
    /// assembled.
    pub fn mass_rhs(&self, f: &[T], comm: &Comm) -> Result<Vec<T>> {
        let nodes = self.dims.len();
        let mut rhs = vec![T::ZERO; self.n_slots()];
        for e in 0..self.disc.n_elements() {
            let mass = &self.mass[e];
            for i in 0..nodes {
                rhs[e * nodes + i] = mass[i] * f[e * nodes + i];
            }
        }
        self.gs_exchange_t(&mut rhs, comm)?;
        Ok(rhs)
    }

    /// Dirichlet lift: rhs -= A u_bc with the mask temporarily released on
    /// the boundary values, then mask rhs. `u_bc` holds boundary values at
    /// masked slots (anything at free slots is ignored).
    pub fn lift_dirichlet(&self, rhs: &mut [T], u_bc: &[T], comm: &Comm) -> Result<()> {
        let nodes = self.dims.len();
        // apply the UNmasked operator to the boundary extension
        let mut ub = vec![T::ZERO; self.n_slots()];
        for (i, (&m, v)) in self.mask.iter().zip(u_bc).enumerate() {
            if m {
                ub[i] = *v;
            }
        }
        let mut au = vec![T::ZERO; self.n_slots()];
        for e in 0..self.disc.n_elements() {
            let lam = T::from_f64(self.h_laplace.at(e));
            let sig = T::from_f64(self.h_mass.at(e));
            let xe = &ub[e * nodes..(e + 1) * nodes];
            let ye = &mut au[e * nodes..(e + 1) * nodes];
            self.element_apply_staged(e, lam, sig, xe, ye)?;
        }
        self.gs_exchange_t(&mut au, comm)?;
        for i in 0..rhs.len() {
            rhs[i] -= au[i];
        }
        self.zero_masked(rhs);
        Ok(())
    }
}

fn count_flops<T: Real>(n: u64) {
    if std::mem::size_of::<T>() == 4 {
        crate::flops::add_fp32(n);
    } else {
        crate::flops::add_fp64(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{spawn, Scheduler};
    use crate::mesh::{build_box_mesh, BoxSpec};

    fn poisson_op(
        extents: (usize, usize, usize),
        order: usize,
        c: &Comm,
    ) -> (crate::mesh::MeshPartition, LevelOperator<f64>) {
        let m = build_box_mesh(extents, BoxSpec::unit(), order, c).unwrap();
        let disc = Arc::new(Discretization::build(&m, c, order).unwrap());
        let mask = build_mask(&m, &disc, c, |t| t == FaceTag::Dirichlet).unwrap();
        let op = LevelOperator::new(
            disc,
            Coefficient::Uniform(1.0),
            Coefficient::Uniform(0.0),
            mask,
            c,
        )
        .unwrap();
        (m, op)
    }

    #[test]
    fn operator_is_symmetric() {
        let out = spawn(2, Scheduler::Concurrent, |c| {
            let (_, op) = poisson_op((2, 2, 1), 3, c);
            let n = op.n_slots();
            let mk = |seed: u64| -> Vec<f64> {
                let mut s = seed + c.rank() as u64 * 31;
                let mut v: Vec<f64> = (0..n)
                    .map(|_| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                        ((s >> 33) as f64) / (u32::MAX as f64) - 0.5
                    })
                    .collect();
                // make continuous and masked
                let mut b = v.clone();
                op.disc.gs.exchange(&mut b, GsOp::Sum, c).unwrap();
                v.copy_from_slice(&b);
                op.zero_masked(&mut v);
                v
            };
            let u = mk(1);
            let v = mk(2);
            let mut au = vec![0.0; n];
            let mut av = vec![0.0; n];
            op.apply(&u, &mut au, c).unwrap();
            op.apply(&v, &mut av, c).unwrap();
            let a = op.dot(&au, &v, c).unwrap();
            let b = op.dot(&u, &av, c).unwrap();
            (a - b).abs() < 1e-10 * (1.0 + a.abs())
        })
        .unwrap();
        assert!(out.iter().all(|&ok| ok));
    }

    #[test]
    fn diagonal_matches_operator_probing() {
        let out = spawn(1, Scheduler::Concurrent, |c| {
            let (_, op) = poisson_op((2, 1, 1), 2, c);
            let n = op.n_slots();
            // probe A e_g for each global dof: build the continuous
            // indicator of a gid, apply, read back a diagonal entry
            let nodes_per = 27;
            let mut ok = true;
            for e in 0..2usize {
                for node in 0..nodes_per {
                    let slot = e * nodes_per + node;
                    if op.mask[slot] {
                        continue;
                    }
                    let gid = op.disc.numbering.gids[e][node];
                    let mut u = vec![0.0; n];
                    for (ee, egids) in op.disc.numbering.gids.iter().enumerate() {
                        for (nn, &g) in egids.iter().enumerate() {
                            if g == gid {
                                u[ee * nodes_per + nn] = 1.0;
                            }
                        }
                    }
                    let mut au = vec![0.0; n];
                    op.apply(&u, &mut au, c).unwrap();
                    ok &= (au[slot] - op.diag[slot]).abs() < 1e-10 * (1.0 + op.diag[slot].abs());
                }
            }
            ok
        })
        .unwrap();
        assert!(out[0]);
    }

    #[test]
    fn pure_neumann_has_nullspace() {
        let out = spawn(1, Scheduler::Concurrent, |c| {
            let m = build_box_mesh((2, 2, 1), BoxSpec::unit(), 3, c).unwrap();
            let disc = Arc::new(Discretization::build(&m, c, 3).unwrap());
            let op = LevelOperator::<f64>::new(
                disc,
                Coefficient::Uniform(1.0),
                Coefficient::Uniform(0.0),
                vec![false; m.n_local_slots()],
                c,
            )
            .unwrap();
            assert!(op.nullspace);
            let u = vec![1.0; op.n_slots()];
            let mut au = vec![0.0; op.n_slots()];
            op.apply(&u, &mut au, c).unwrap();
            au.iter().all(|v| v.abs() < 1e-10)
        })
        .unwrap();
        assert!(out[0]);
    }

    #[test]
    fn mask_propagates_across_ranks() {
        let out = spawn(2, Scheduler::Concurrent, |c| {
            let (m, op) = poisson_op((2, 1, 1), 2, c);
            // boundary slots must be masked wherever shared
            let nodes_per = 27;
            let mut ok = true;
            for (ei, e) in m.elements.iter().enumerate() {
                for (ni, p) in e.coords.iter().enumerate() {
                    let on_boundary = p.iter().any(|&x| x < 1e-12 || x > 1.0 - 1e-12);
                    ok &= op.mask[ei * nodes_per + ni] == on_boundary;
                }
            }
            ok
        })
        .unwrap();
        assert!(out.iter().all(|&ok| ok));
    }
}
