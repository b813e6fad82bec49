//! The assembled p=1 coarse problem (~E_global unknowns), replicated on
//! every rank: direct LDL^T below a size threshold, damped-Jacobi CG above.
//! Pure-Neumann problems are handled by pinning one dof and returning
//! mean-zero solutions.

use crate::comm::{Comm, ReduceOp};
use crate::error::{Error, Result};
use crate::la::{Ldlt, MatG};
use crate::scalar::Real;
use std::collections::BTreeMap;

use super::helmholtz::LevelOperator;

const DIRECT_MAX: usize = 3000;

struct Csr<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<T>,
    inv_diag: Vec<T>,
}

impl<T: Real> Csr<T> {
    fn matvec(&self, x: &[T], y: &mut [T]) {
        for i in 0..self.n {
            let mut s = T::ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            y[i] = s;
        }
    }
}

enum Kind<T: Real> {
    Direct(Ldlt<T>),
    Iterative(Csr<T>, f64),
}

pub struct CoarseProblem<T: Real> {
    kind: Kind<T>,
    n: usize,
    gid_per_slot: Vec<u64>,
    inv_mult: Vec<f64>,
    masked: Vec<bool>,
    nullspace: bool,
    pinned: Option<usize>,
}

impl<T: Real> CoarseProblem<T> {
    /// Assemble the global sparse operator from local element matrices
    /// (collective; the matrix is replicated on all ranks).
    pub fn build(op: &LevelOperator<T>, comm: &Comm, tol: f64) -> Result<Self> {
        let nodes = op.disc.nodes_per_element;
        let n = op.disc.numbering.n_global as usize;
        // pack (gids, mask, element matrix) per element
        let mut packed = Vec::new();
        for e in 0..op.disc.n_elements() {
            for &g in &op.disc.numbering.gids[e] {
                packed.extend_from_slice(&g.to_le_bytes());
            }
            for i in 0..nodes {
                packed.push(op.mask[e * nodes + i] as u8);
            }
            let m = op.element_matrix(e)?;
            for v in m {
                packed.extend_from_slice(&v.to_f64().to_le_bytes());
            }
        }
        let gathered = comm.allgather_bytes(&packed)?;
        let rec = nodes * 8 + nodes + nodes * nodes * 8;
        let mut entries: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        let mut masked = vec![false; n];
        for bytes in &gathered {
            if bytes.len() % rec != 0 {
                return Err(Error::Topology("coarse assembly record mismatch".into()));
            }
            for chunk in bytes.chunks_exact(rec) {
                let mut gids = vec![0u64; nodes];
                for (i, g) in gids.iter_mut().enumerate() {
                    *g = u64::from_le_bytes(chunk[i * 8..i * 8 + 8].try_into().unwrap());
                }
                let mask_off = nodes * 8;
                for i in 0..nodes {
                    if chunk[mask_off + i] != 0 {
                        masked[gids[i] as usize] = true;
                    }
                }
                let m_off = mask_off + nodes;
                for i in 0..nodes {
                    for j in 0..nodes {
                        let off = m_off + (i * nodes + j) * 8;
                        let v = f64::from_le_bytes(chunk[off..off + 8].try_into().unwrap());
                        if v != 0.0 {
                            *entries.entry((gids[i], gids[j])).or_insert(0.0) += v;
                        }
                    }
                }
            }
        }
        let nullspace = op.nullspace;
        let pinned = if nullspace { Some(0) } else { None };
        let is_fixed = |g: usize| masked[g] || pinned == Some(g);
        // identity rows/cols for fixed dofs
        let mut clean: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for (&(i, j), &v) in &entries {
            let (iu, ju) = (i as usize, j as usize);
            if is_fixed(iu) || is_fixed(ju) {
                continue;
            }
            clean.insert((i, j), v);
        }
        for g in 0..n {
            if is_fixed(g) {
                clean.insert((g as u64, g as u64), 1.0);
            }
        }
        let kind = if n <= DIRECT_MAX {
            let mut dense = MatG::<T>::zeros(n, n);
            for (&(i, j), &v) in &clean {
                dense.set(i as usize, j as usize, T::from_f64(v));
            }
            let ldlt = Ldlt::factor(&dense)
                .ok_or_else(|| Error::Solver("coarse matrix factorization failed".into()))?;
            Kind::Direct(ldlt)
        } else {
            let mut row_ptr = vec![0usize; n + 1];
            for &(i, _) in clean.keys() {
                row_ptr[i as usize + 1] += 1;
            }
            for i in 0..n {
                row_ptr[i + 1] += row_ptr[i];
            }
            let mut cols = vec![0u32; clean.len()];
            let mut vals = vec![T::ZERO; clean.len()];
            let mut cursor = row_ptr.clone();
            let mut inv_diag = vec![T::ONE; n];
            for (&(i, j), &v) in &clean {
                let k = cursor[i as usize];
                cols[k] = j as u32;
                vals[k] = T::from_f64(v);
                cursor[i as usize] += 1;
                if i == j {
                    inv_diag[i as usize] = T::from_f64(1.0 / v);
                }
            }
            Kind::Iterative(
                Csr {
                    n,
                    row_ptr,
                    cols,
                    vals,
                    inv_diag,
                },
                tol,
            )
        };
        let gid_per_slot: Vec<u64> = op
            .disc
            .numbering
            .gids
            .iter()
            .flat_map(|e| e.iter().copied())
            .collect();
        Ok(CoarseProblem {
            kind,
            n,
            gid_per_slot,
            inv_mult: op.disc.gs.inv_multiplicity().to_vec(),
            masked,
            nullspace,
            pinned,
        })
    }

    pub fn n_global(&self) -> usize {
        self.n
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.kind, Kind::Direct(_))
    }

    /// Solve for a copy-consistent local right-hand side; the returned
    /// local vector is copy-consistent too. Collective.
    pub fn solve(&self, r_local: &[T], comm: &Comm) -> Result<Vec<T>> {
        // global rhs: every copy contributes value/multiplicity
        let mut rhs = vec![0.0f64; self.n];
        for (slot, &g) in self.gid_per_slot.iter().enumerate() {
            rhs[g as usize] += r_local[slot].to_f64() * self.inv_mult[slot];
        }
        comm.allreduce(&mut rhs, ReduceOp::Sum)?;
        for g in 0..self.n {
            if self.masked[g] || self.pinned == Some(g) {
                rhs[g] = 0.0;
            }
        }
        let mut x = vec![T::ZERO; self.n];
        match &self.kind {
            Kind::Direct(ldlt) => {
                let rhs_t: Vec<T> = rhs.iter().map(|&v| T::from_f64(v)).collect();
                ldlt.solve(&rhs_t, &mut x);
            }
            Kind::Iterative(csr, tol) => {
                let b: Vec<T> = rhs.iter().map(|&v| T::from_f64(v)).collect();
                jacobi_cg(csr, &b, &mut x, *tol, 4 * self.n + 100);
            }
        }
        if self.nullspace {
            // mean over free dofs
            let mut sum = 0.0;
            let mut count = 0usize;
            for g in 0..self.n {
                if !self.masked[g] {
                    sum += x[g].to_f64();
                    count += 1;
                }
            }
            let mean = T::from_f64(sum / count.max(1) as f64);
            for g in 0..self.n {
                if !self.masked[g] {
                    x[g] -= mean;
                }
            }
        }
        Ok(self
            .gid_per_slot
            .iter()
            .map(|&g| x[g as usize])
            .collect())
    }
}

fn jacobi_cg<T: Real>(a: &Csr<T>, b: &[T], x: &mut [T], tol: f64, max_it: usize) {
    let n = a.n;
    let mut r = b.to_vec();
    let mut z = vec![T::ZERO; n];
    for i in 0..n {
        z[i] = a.inv_diag[i] * r[i];
    }
    let mut p = z.clone();
    let dot = |u: &[T], v: &[T]| -> f64 {
        let mut s = 0.0;
        for i in 0..u.len() {
            s += (u[i] * v[i]).to_f64();
        }
        s
    };
    let b_norm = dot(b, b).sqrt().max(1e-300);
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::ZERO; n];
    for _ in 0..max_it {
        if dot(&r, &r).sqrt() <= tol * b_norm {
            break;
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = T::from_f64(rz / pap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = a.inv_diag[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = T::from_f64(rz_new / rz);
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{spawn, Scheduler};
    use crate::mesh::{build_box_mesh, BoxSpec, Discretization, FaceTag};
    use crate::solver::helmholtz::{build_mask, Coefficient};
    use std::sync::Arc;

    fn p1_op(c: &Comm, extents: (usize, usize, usize), dirichlet: bool) -> LevelOperator<f64> {
        let m = build_box_mesh(extents, BoxSpec::unit(), 1, c).unwrap();
        let disc = Arc::new(Discretization::build(&m, c, 1).unwrap());
        let mask = if dirichlet {
            build_mask(&m, &disc, c, |t| t == FaceTag::Dirichlet).unwrap()
        } else {
            vec![false; m.n_local_slots()]
        };
        LevelOperator::new(
            disc,
            Coefficient::Uniform(1.0),
            Coefficient::Uniform(0.0),
            mask,
            c,
        )
        .unwrap()
    }

    #[test]
    fn trivial_single_element() {
        let out = spawn(1, Scheduler::Concurrent, |c| {
            let m = build_box_mesh((1, 1, 1), BoxSpec::unit(), 1, c).unwrap();
            let disc = Arc::new(Discretization::build(&m, c, 1).unwrap());
            let mask = build_mask(&m, &disc, c, |t| t == FaceTag::Dirichlet).unwrap();
            // all 8 dofs are boundary: mass term keeps it non-trivial
            let op = LevelOperator::<f64>::new(
                disc,
                Coefficient::Uniform(0.0),
                Coefficient::Uniform(1.0),
                mask,
                c,
            )
            .unwrap();
            let cp = CoarseProblem::build(&op, c, 1e-10).unwrap();
            // everything masked -> identity system
            let r = vec![0.0; op.n_slots()];
            let x = cp.solve(&r, c).unwrap();
            x.iter().all(|&v| v == 0.0)
        })
        .unwrap();
        assert!(out[0]);
    }

    #[test]
    fn matches_dense_direct_oracle() {
        // p=1 Poisson on a 4^3 box with Dirichlet walls vs applying the
        // operator to the coarse solution: residual must vanish
        let out = spawn(2, Scheduler::Concurrent, |c| {
            let op = p1_op(c, (4, 4, 4), true);
            let cp = CoarseProblem::build(&op, c, 1e-12).unwrap();
            assert!(cp.is_direct());
            let n = op.n_slots();
            let mut f = vec![0.0; n];
            for s in 0..n {
                let p = op.disc.slot_coords(s);
                f[s] = (3.0 * p[0] - p[1]).sin() + p[2];
            }
            let mut b = op.mass_rhs(&f, c).unwrap();
            op.zero_masked(&mut b);
            let x = cp.solve(
                &b.iter().copied().collect::<Vec<f64>>(),
                c,
            )
            .unwrap();
            let mut ax = vec![0.0; n];
            op.apply(&x, &mut ax, c).unwrap();
            let mut err: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..n {
                err = err.max((ax[i] - b[i]).abs());
                scale = scale.max(b[i].abs());
            }
            err <= 1e-10 * scale.max(1.0)
        })
        .unwrap();
        assert!(out.iter().all(|&ok| ok));
    }

    #[test]
    fn pure_neumann_mean_zero() {
        let out = spawn(1, Scheduler::Concurrent, |c| {
            let op = p1_op(c, (3, 3, 1), false);
            assert!(op.nullspace);
            let cp = CoarseProblem::build(&op, c, 1e-12).unwrap();
            let n = op.n_slots();
            // consistent rhs: mass-weighted mean-zero forcing
            let mut f = vec![0.0; n];
            for s in 0..n {
                let p = op.disc.slot_coords(s);
                f[s] = (2.0 * std::f64::consts::PI * p[0]).cos();
            }
            let mut b = op.mass_rhs(&f, c).unwrap();
            op.project_nullspace(&mut b, c).unwrap();
            let x = cp.solve(&b, c).unwrap();
            // mean over unique dofs is zero
            let ones = vec![1.0; n];
            let mean = op.dot(&x, &ones, c).unwrap() / op.dot(&ones, &ones, c).unwrap();
            mean.abs() < 1e-10
        })
        .unwrap();
        assert!(out[0]);
    }
}
