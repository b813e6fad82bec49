//! p-multigrid preconditioner: a V-cycle over descending polynomial orders
//! ending at the assembled p=1 coarse problem, with symmetric pre/post
//! Chebyshev smoothing so the cycle is a valid SPD preconditioner for CG.
//!
//! Generic over the scalar: the FP32 variant stores all level data and runs
//! all smoothing arithmetic in single precision while the Krylov outer loop
//! stays in f64.

use crate::comm::Comm;
use crate::error::{Error, Result};
use crate::la::MatG;
use crate::mesh::{Discretization, FaceTag, MeshPartition};
use crate::ref_element::{self, tensor_apply, Axis, Dims};
use crate::scalar::Real;
use std::sync::Arc;

use super::chebyshev::{estimate_lambda_max, ChebyshevSmoother};
use super::coarse::CoarseProblem;
use super::helmholtz::{build_mask, Coefficient, LevelOperator};
use super::pcg::Precond;

#[derive(Debug, Clone)]
pub struct PmgConfig {
    /// Descending polynomial orders, ending at 1.
    pub schedule: Vec<usize>,
    pub cheb_order: usize,
    /// Smoothing band lower edge as a fraction of the lambda_max estimate.
    pub lambda_min_frac: f64,
    /// Safety factor applied to the lambda_max estimate.
    pub lambda_safety: f64,
    pub coarse_tol: f64,
}

impl PmgConfig {
    pub fn for_order(n: usize) -> Self {
        PmgConfig {
            schedule: default_schedule(n),
            cheb_order: 6,
            // 0.05 keeps the level bands overlapping enough that CG
            // iteration counts stay nearly E-independent; 0.1 leaves a
            // band gap measurable as ~60% growth under 8x E refinement
            lambda_min_frac: 0.05,
            lambda_safety: 1.1,
            coarse_tol: 1e-8,
        }
    }
}

/// Default schedules: aggressive [N,5,3,1] for N>=7, [N,3,1] for mid
/// orders, [N,1] otherwise.
pub fn default_schedule(n: usize) -> Vec<usize> {
    let mut s = if n >= 7 {
        vec![n, 5, 3, 1]
    } else if n >= 4 {
        vec![n, 3, 1]
    } else if n >= 2 {
        vec![n, 1]
    } else {
        vec![1]
    };
    s.dedup();
    s
}

struct PmgLevel<T: Real> {
    op: LevelOperator<T>,
    smoother: ChebyshevSmoother<T>,
    /// 1D interpolation from the next-coarser level onto this level.
    from_coarser: Option<MatG<T>>,
    dims: Dims,
    coarse_dims: Dims,
}

pub struct Pmg<T: Real> {
    levels: Vec<PmgLevel<T>>,
    coarse: CoarseProblem<T>,
    pub schedule: Vec<usize>,
    pub stored_bytes: usize,
}

/// Everything needed to build level operators for one problem.
pub struct PmgProblem<'a> {
    pub mesh: &'a MeshPartition,
    pub h_laplace: Coefficient,
    pub h_mass: Coefficient,
    /// which face tags are Dirichlet-constrained for this field
    pub dirichlet: fn(FaceTag) -> bool,
}

impl<T: Real> Pmg<T> {
    pub fn build(
        problem: &PmgProblem,
        fine_disc: Arc<Discretization>,
        comm: &Comm,
        cfg: &PmgConfig,
    ) -> Result<Self> {
        if cfg.schedule.last() != Some(&1) {
            return Err(Error::Config(format!(
                "pMG schedule must end at order 1, got {:?}",
                cfg.schedule
            )));
        }
        if cfg.schedule.is_empty() || cfg.schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "pMG schedule must be strictly descending, got {:?}",
                cfg.schedule
            )));
        }
        if cfg.schedule[0] != fine_disc.order {
            return Err(Error::Config(format!(
                "pMG schedule must start at the fine order {} (got {:?})",
                fine_disc.order, cfg.schedule
            )));
        }
        let mut levels: Vec<PmgLevel<T>> = Vec::with_capacity(cfg.schedule.len());
        let mut coarse_op: Option<LevelOperator<T>> = None;
        let mut stored_bytes = 0usize;
        for (li, &order) in cfg.schedule.iter().enumerate() {
            let disc = if li == 0 {
                fine_disc.clone()
            } else {
                Arc::new(Discretization::build(problem.mesh, comm, order)?)
            };
            let mask = build_mask(problem.mesh, &disc, comm, problem.dirichlet)?;
            let op = LevelOperator::<T>::new(
                disc.clone(),
                problem.h_laplace.clone(),
                problem.h_mass.clone(),
                mask,
                comm,
            )?;
            let lmax = estimate_lambda_max(&op, comm)?;
            let hi = cfg.lambda_safety * lmax;
            let smoother = ChebyshevSmoother::<T>::new(cfg.cheb_order, cfg.lambda_min_frac * hi, hi)?;
            let from_coarser = if li + 1 < cfg.schedule.len() {
                let coarse_order = cfg.schedule[li + 1];
                let interp = ref_element::interp(coarse_order, order)?;
                Some(interp.entries.cast::<T>())
            } else {
                None
            };
            let dims = Dims::cube(order + 1);
            let coarse_dims = if li + 1 < cfg.schedule.len() {
                Dims::cube(cfg.schedule[li + 1] + 1)
            } else {
                dims
            };
            // level storage accounting (metric + mass + diag + transfer)
            let per_elem = disc.n_elements() * dims.len();
            stored_bytes += (6 * per_elem + 2 * per_elem) * std::mem::size_of::<T>();
            if let Some(m) = &from_coarser {
                stored_bytes += m.a.len() * std::mem::size_of::<T>();
            }
            if li + 1 == cfg.schedule.len() {
                coarse_op = Some(op);
            } else {
                levels.push(PmgLevel {
                    op,
                    smoother,
                    from_coarser,
                    dims,
                    coarse_dims,
                });
            }
        }
        let coarse_op = coarse_op.unwrap();
        let coarse = CoarseProblem::build(&coarse_op, comm, cfg.coarse_tol)?;
        // the coarsest smoothing level still needs transfer bookkeeping:
        // store the coarse operator as the last level with no smoother use
        levels.push(PmgLevel {
            smoother: ChebyshevSmoother::<T>::new(1, 0.5, 1.0)?,
            from_coarser: None,
            dims: Dims::cube(coarse_op.disc.order + 1),
            coarse_dims: Dims::cube(coarse_op.disc.order + 1),
            op: coarse_op,
        });
        Ok(Pmg {
            levels,
            coarse,
            schedule: cfg.schedule.clone(),
            stored_bytes,
        })
    }

    pub fn coarse_is_direct(&self) -> bool {
        self.coarse.is_direct()
    }

    /// One V-cycle at level `li` for the right-hand side `r` (assembled,
    /// masked). Linear and symmetric in r.
    fn vcycle(&self, li: usize, r: &[T], comm: &Comm) -> Result<Vec<T>> {
        let level = &self.levels[li];
        if li + 1 == self.levels.len() {
            let _t = crate::runtime::stats::scoped("coarse grid");
            let mut x = self.coarse.solve(r, comm)?;
            level.op.zero_masked(&mut x);
            return Ok(x);
        }
        let n = r.len();
        let mut x = vec![T::ZERO; n];
        {
            let _t = crate::runtime::stats::scoped(&format!("pMG smoother L{li}"));
            level.smoother.smooth(&level.op, &mut x, r, comm)?;
        }
        // residual
        let mut res = vec![T::ZERO; n];
        level.op.apply(&x, &mut res, comm)?;
        for i in 0..n {
            res[i] = r[i] - res[i];
        }
        // restrict: 1/mult weighting, per-element P^T, assemble
        let rc = self.restrict(li, &res, comm)?;
        let ec = self.vcycle(li + 1, &rc, comm)?;
        // prolong and correct
        let e = self.prolong(li, &ec)?;
        for i in 0..n {
            x[i] += e[i];
        }
        level.op.zero_masked(&mut x);
        {
            let _t = crate::runtime::stats::scoped(&format!("pMG smoother L{li}"));
            level.smoother.smooth(&level.op, &mut x, r, comm)?;
        }
        Ok(x)
    }

    fn restrict(&self, li: usize, res_fine: &[T], comm: &Comm) -> Result<Vec<T>> {
        let level = &self.levels[li];
        let coarse = &self.levels[li + 1];
        let interp = level.from_coarser.as_ref().unwrap();
        let trans = interp.transpose();
        let fine_nodes = level.dims.len();
        let coarse_nodes = level.coarse_dims.len();
        let n_elem = level.op.disc.n_elements();
        // copy weighted by 1/multiplicity so the assembled transpose is
        // exact on duplicated dofs
        let invm = level.op.disc.gs.inv_multiplicity();
        let mut w = vec![T::ZERO; res_fine.len()];
        for i in 0..res_fine.len() {
            w[i] = res_fine[i] * T::from_f64(invm[i]);
        }
        let mut out = vec![T::ZERO; n_elem * coarse_nodes];
        for e in 0..n_elem {
            let we = &w[e * fine_nodes..(e + 1) * fine_nodes];
            let (a, da) = tensor_apply(&trans, Axis::R, we, level.dims)?;
            let (b, db) = tensor_apply(&trans, Axis::S, &a, da)?;
            let (c, _) = tensor_apply(&trans, Axis::T, &b, db)?;
            out[e * coarse_nodes..(e + 1) * coarse_nodes].copy_from_slice(&c);
        }
        coarse.op.gs_exchange_t(&mut out, comm)?;
        coarse.op.zero_masked(&mut out);
        if coarse.op.nullspace {
            coarse.op.project_nullspace(&mut out, comm)?;
        }
        Ok(out)
    }

    fn prolong(&self, li: usize, ec: &[T]) -> Result<Vec<T>> {
        let level = &self.levels[li];
        let interp = level.from_coarser.as_ref().unwrap();
        let fine_nodes = level.dims.len();
        let coarse_nodes = level.coarse_dims.len();
        let n_elem = level.op.disc.n_elements();
        let mut out = vec![T::ZERO; n_elem * fine_nodes];
        for e in 0..n_elem {
            let ce = &ec[e * coarse_nodes..(e + 1) * coarse_nodes];
            let (a, da) = tensor_apply(interp, Axis::R, ce, level.coarse_dims)?;
            let (b, db) = tensor_apply(interp, Axis::S, &a, da)?;
            let (c, _) = tensor_apply(interp, Axis::T, &b, db)?;
            out[e * fine_nodes..(e + 1) * fine_nodes].copy_from_slice(&c);
        }
        Ok(out)
    }

    pub fn apply_t(&self, r: &[T], comm: &Comm) -> Result<Vec<T>> {
        self.vcycle(0, r, comm)
    }
}

/// Preconditioner precision variants behind the f64 CG interface.
pub enum PmgPrecond {
    F64(Pmg<f64>),
    F32(Pmg<f32>),
}

impl PmgPrecond {
    pub fn stored_bytes(&self) -> usize {
        match self {
            PmgPrecond::F64(p) => p.stored_bytes,
            PmgPrecond::F32(p) => p.stored_bytes,
        }
    }

    pub fn schedule(&self) -> &[usize] {
        match self {
            PmgPrecond::F64(p) => &p.schedule,
            PmgPrecond::F32(p) => &p.schedule,
        }
    }
}

impl Precond for PmgPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64], comm: &Comm) -> Result<()> {
        match self {
            PmgPrecond::F64(p) => {
                let x = p.apply_t(r, comm)?;
                z.copy_from_slice(&x);
            }
            PmgPrecond::F32(p) => {
                let r32: Vec<f32> = r.iter().map(|&v| v as f32).collect();
                let x = p.apply_t(&r32, comm)?;
                for (o, v) in z.iter_mut().zip(x) {
                    *o = v as f64;
                }
            }
        }
        Ok(())
    }
    fn name(&self) -> &str {
        match self {
            PmgPrecond::F64(_) => "pMG (FP64)",
            PmgPrecond::F32(_) => "pMG (FP32)",
        }
    }
}
