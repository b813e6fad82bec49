//! Time advancement: BDFk/EXTk splitting for the temperature equation and
//! the incompressible Navier-Stokes system, with dealiased advection.
//! Solid subdomains advance conduction only.

pub mod advection;
mod flow;
mod scalar;

pub use advection::{dealias_order, AdvectionKernel};
pub use flow::{advance_flow, FlowSolvers, FlowStepReport};
pub use scalar::{advance_scalar, InterfaceValues, ScalarBc, ScalarSolvers};

use crate::comm::Comm;
use crate::error::{Error, Result};
use crate::fields::FieldFn;
use crate::mesh::{Discretization, FaceTag, GsOp, MeshPartition, FACE_COUNT};
use crate::ref_element::local_grad;
use crate::solver::face_nodes;
use std::collections::VecDeque;
use std::sync::Arc;

/// Dimensionless material properties.
#[derive(Debug, Clone, Copy)]
pub struct MaterialProps {
    pub re: f64,
    pub pr: f64,
    /// solid-region volumetric heat capacity (fluid convention is 1.0)
    pub rho_cp: f64,
    /// solid-region conductivity
    pub conductivity: f64,
}

impl MaterialProps {
    pub fn new(re: f64, pr: f64) -> Result<Self> {
        if re <= 0.0 || pr <= 0.0 {
            return Err(Error::Config("Re and Pr must be positive".into()));
        }
        Ok(MaterialProps {
            re,
            pr,
            rho_cp: 1.0,
            conductivity: 1.0,
        })
    }

    /// Fluid thermal diffusivity 1/(Re Pr).
    pub fn fluid_kappa(&self) -> f64 {
        1.0 / (self.re * self.pr)
    }
}

/// Variable-step BDF and extrapolation weights of order k (1..=3).
///
/// `dt_hist[0]` is the step being taken (t_{n+1} - t_n), `dt_hist[1]` the
/// one before, and so on. The BDF weights satisfy
/// u'(t_{n+1}) ~ sum_j bdf[j] u(t_{n+1-j}) with bdf[0] multiplying the new
/// value; the EXT weights reconstruct f(t_{n+1}) from the k prior values.
pub fn bdf_ext_coeffs(k: usize, dt_hist: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if k < 1 || k > 3 {
        return Err(Error::Unsupported(format!(
            "integrator order {k} (supported 1..=3)"
        )));
    }
    if dt_hist.len() < k || dt_hist[..k].iter().any(|&d| d <= 0.0) {
        return Err(Error::Config("need k positive time steps".into()));
    }
    // node times relative to t_{n+1}: tau_0 = 0, tau_j = -(dt_1+...+dt_j)
    let mut tau = vec![0.0; k + 1];
    for j in 1..=k {
        tau[j] = tau[j - 1] - dt_hist[j - 1];
    }
    // derivative of the Lagrange interpolant at 0
    let mut bdf = vec![0.0; k + 1];
    for j in 0..=k {
        if j == 0 {
            let mut s = 0.0;
            for (m, &tm) in tau.iter().enumerate() {
                if m != 0 {
                    s += 1.0 / (0.0 - tm);
                }
            }
            bdf[0] = s;
        } else {
            // only the m=0 product term survives at x = tau_0 = 0
            let mut num = 1.0;
            for (l, &tl) in tau.iter().enumerate() {
                if l != j && l != 0 {
                    num *= 0.0 - tl;
                }
            }
            let mut den = 1.0;
            for (m, &tm) in tau.iter().enumerate() {
                if m != j {
                    den *= tau[j] - tm;
                }
            }
            bdf[j] = num / den;
        }
    }
    // extrapolation from tau_1..tau_k to 0
    let mut ext = vec![0.0; k];
    for j in 1..=k {
        let mut w = 1.0;
        for m in 1..=k {
            if m != j {
                w *= (0.0 - tau[m]) / (tau[j] - tau[m]);
            }
        }
        ext[j - 1] = w;
    }
    Ok((bdf, ext))
}

/// Step-count-aware integrator: ramps the effective order up as history
/// accumulates.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub order: usize,
    dts: VecDeque<f64>,
}

impl Integrator {
    pub fn new(order: usize) -> Result<Self> {
        if order < 1 || order > 3 {
            return Err(Error::Unsupported(format!(
                "integrator order {order} (supported 1..=3)"
            )));
        }
        Ok(Integrator {
            order,
            dts: VecDeque::new(),
        })
    }

    pub fn push_dt(&mut self, dt: f64) {
        self.dts.push_front(dt);
        while self.dts.len() > 3 {
            self.dts.pop_back();
        }
    }

    pub fn effective_order(&self) -> usize {
        self.order.min(self.dts.len())
    }

    pub fn coeffs(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.effective_order();
        let hist: Vec<f64> = self.dts.iter().copied().collect();
        bdf_ext_coeffs(k, &hist)
    }
}

/// One boundary face of a local element with surface quadrature data.
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub elem: usize,
    pub face: usize,
    pub tag: FaceTag,
    /// node indices within the element lattice
    pub nodes: Vec<u32>,
    /// surface quadrature weights w_b w_c |dS|
    pub area_w: Vec<f64>,
    /// outward unit normals at the face nodes
    pub normals: Vec<[f64; 3]>,
}

/// A mesh discretized and instrumented for timestepping: advection
/// machinery, boundary faces with surface quadrature, lumped mass.
pub struct SimDomain {
    pub mesh: MeshPartition,
    pub disc: Arc<Discretization>,
    pub adv: Option<AdvectionKernel>,
    pub bfaces: Vec<BoundaryFace>,
    /// assembled (gather-scattered) diagonal mass
    pub lumped_mass: Vec<f64>,
}

impl SimDomain {
    /// Collective build; `nq` enables the dealiased advection kernel.
    pub fn build(mesh: MeshPartition, comm: &Comm, nq: Option<usize>) -> Result<Self> {
        let disc = Arc::new(Discretization::build(&mesh, comm, mesh.order)?);
        let adv = match nq {
            Some(q) => Some(AdvectionKernel::build(&disc, q)?),
            None => None,
        };
        let bfaces = boundary_faces(&mesh, &disc)?;
        let mut lumped: Vec<f64> = disc
            .geom
            .iter()
            .flat_map(|g| g.mass.iter().copied())
            .collect();
        disc.gs.exchange(&mut lumped, GsOp::Sum, comm)?;
        Ok(SimDomain {
            mesh,
            disc,
            adv,
            bfaces,
            lumped_mass: lumped,
        })
    }

    /// Convert a weak (unassembled) form to pointwise values:
    /// gather-scatter sum then divide by the lumped mass.
    pub fn unweak(&self, weak: &mut Vec<f64>, comm: &Comm) -> Result<()> {
        self.disc.gs.exchange(weak, GsOp::Sum, comm)?;
        for (v, m) in weak.iter_mut().zip(&self.lumped_mass) {
            *v /= m;
        }
        Ok(())
    }

    /// Fill values of `f` at every slot whose face tag matches.
    pub fn fill_boundary(
        &self,
        which: impl Fn(FaceTag) -> bool,
        f: &FieldFn,
        t: f64,
        out: &mut [f64],
    ) {
        let nodes_per = self.disc.nodes_per_element;
        for bf in &self.bfaces {
            if !which(bf.tag) {
                continue;
            }
            for &ni in &bf.nodes {
                let slot = bf.elem * nodes_per + ni as usize;
                out[slot] = f(self.disc.coords[bf.elem][ni as usize], t);
            }
        }
    }

    /// Surface integral over faces with matching tags: sum of
    /// area_w * g(x, n, slot), reduced over ranks.
    pub fn surface_integral(
        &self,
        which: impl Fn(FaceTag) -> bool,
        g: impl Fn([f64; 3], [f64; 3], usize) -> f64,
        comm: &Comm,
    ) -> Result<f64> {
        let nodes_per = self.disc.nodes_per_element;
        let mut local = 0.0;
        for bf in &self.bfaces {
            if !which(bf.tag) {
                continue;
            }
            for (k, &ni) in bf.nodes.iter().enumerate() {
                let slot = bf.elem * nodes_per + ni as usize;
                let x = self.disc.coords[bf.elem][ni as usize];
                local += bf.area_w[k] * g(x, bf.normals[k], slot);
            }
        }
        comm.allreduce_scalar(local, crate::comm::ReduceOp::Sum)
    }

    /// Pointwise physical gradient of a continuous field, averaged across
    /// element faces (multiplicity-weighted gather-scatter).
    pub fn smooth_grad(&self, u: &[f64], comm: &Comm) -> Result<[Vec<f64>; 3]> {
        let nodes = self.disc.nodes_per_element;
        let n = self.disc.n_slots();
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let mut gz = vec![0.0; n];
        for (e, geom) in self.disc.geom.iter().enumerate() {
            let ue = &u[e * nodes..(e + 1) * nodes];
            let (ux, uy, uz) = geom.physical_grad(&self.disc.basis, ue)?;
            gx[e * nodes..(e + 1) * nodes].copy_from_slice(&ux);
            gy[e * nodes..(e + 1) * nodes].copy_from_slice(&uy);
            gz[e * nodes..(e + 1) * nodes].copy_from_slice(&uz);
        }
        for g in [&mut gx, &mut gy, &mut gz] {
            for (v, im) in g.iter_mut().zip(self.disc.gs.inv_multiplicity()) {
                *v *= im;
            }
            self.disc.gs.exchange(g, GsOp::Sum, comm)?;
        }
        Ok([gx, gy, gz])
    }

    /// Mass-weighted volume integral of pointwise nodal values.
    pub fn volume_integral(&self, u: &[f64], comm: &Comm) -> Result<f64> {
        let mut local = 0.0;
        let nodes = self.disc.nodes_per_element;
        for (e, geom) in self.disc.geom.iter().enumerate() {
            for i in 0..nodes {
                local += geom.mass[i] * u[e * nodes + i];
            }
        }
        comm.allreduce_scalar(local, crate::comm::ReduceOp::Sum)
    }
}

fn boundary_faces(mesh: &MeshPartition, disc: &Discretization) -> Result<Vec<BoundaryFace>> {
    let mut out = Vec::new();
    let d = disc.dims;
    let n1 = d.nr;
    for (ei, e) in mesh.elements.iter().enumerate() {
        if e.boundary.iter().all(|&t| t == FaceTag::Interior) {
            continue;
        }
        // reference gradients of the coordinates for surface Jacobians
        let len = d.len();
        let mut comp = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        for (i, p) in disc.coords[ei].iter().enumerate() {
            comp[0][i] = p[0];
            comp[1][i] = p[1];
            comp[2][i] = p[2];
        }
        let mut dxdr: Vec<Vec<f64>> = Vec::with_capacity(9);
        for c in &comp {
            let (xr, xs, xt, _) = local_grad(&disc.basis.deriv.entries, c, d)?;
            dxdr.push(xr);
            dxdr.push(xs);
            dxdr.push(xt);
        }
        let w = &disc.basis.rule.weights;
        for face in 0..FACE_COUNT {
            if e.boundary[face] == FaceTag::Interior {
                continue;
            }
            let axis = face / 2;
            let plus = face % 2 == 1;
            let (ta, tb) = ((axis + 1) % 3, (axis + 2) % 3);
            let nodes = face_nodes(d, face);
            let mut area_w = Vec::with_capacity(nodes.len());
            let mut normals = Vec::with_capacity(nodes.len());
            for &idx in &nodes {
                // dxdr[3c + a] = d x_c / d r_a; tangents along the two
                // in-face reference axes
                let t1 = [dxdr[ta][idx], dxdr[3 + ta][idx], dxdr[6 + ta][idx]];
                let t2 = [dxdr[tb][idx], dxdr[3 + tb][idx], dxdr[6 + tb][idx]];
                let mut nx = [
                    t1[1] * t2[2] - t1[2] * t2[1],
                    t1[2] * t2[0] - t1[0] * t2[2],
                    t1[0] * t2[1] - t1[1] * t2[0],
                ];
                let norm = (nx[0] * nx[0] + nx[1] * nx[1] + nx[2] * nx[2]).sqrt();
                let sign = if plus { 1.0 } else { -1.0 };
                for v in &mut nx {
                    *v *= sign / norm;
                }
                let i = idx % n1;
                let j = (idx / n1) % n1;
                let k = idx / (n1 * n1);
                let facw = match axis {
                    0 => w[j] * w[k],
                    1 => w[i] * w[k],
                    _ => w[i] * w[j],
                };
                area_w.push(facw * norm);
                normals.push(nx);
            }
            out.push(BoundaryFace {
                elem: ei,
                face,
                tag: e.boundary[face],
                nodes: nodes.iter().map(|&v| v as u32).collect(),
                area_w,
                normals,
            });
        }
    }
    Ok(out)
}

/// Velocity, pressure, temperature, source, and the history rings the
/// splitting needs.
pub struct FlowState {
    pub t: f64,
    pub step: u64,
    pub u: [Vec<f64>; 3],
    pub p: Vec<f64>,
    pub temp: Vec<f64>,
    pub q: Vec<f64>,
    pub u_hist: VecDeque<[Vec<f64>; 3]>,
    pub adv_hist: VecDeque<[Vec<f64>; 3]>,
    pub temp_hist: VecDeque<Vec<f64>>,
    pub temp_adv_hist: VecDeque<Vec<f64>>,
    pub integrator: Integrator,
    pub temp_integrator: Integrator,
}

impl FlowState {
    pub fn new(n_slots: usize, order: usize) -> Result<Self> {
        Ok(FlowState {
            t: 0.0,
            step: 0,
            u: [vec![0.0; n_slots], vec![0.0; n_slots], vec![0.0; n_slots]],
            p: vec![0.0; n_slots],
            temp: vec![0.0; n_slots],
            q: vec![0.0; n_slots],
            u_hist: VecDeque::new(),
            adv_hist: VecDeque::new(),
            temp_hist: VecDeque::new(),
            temp_adv_hist: VecDeque::new(),
            integrator: Integrator::new(order)?,
            temp_integrator: Integrator::new(order)?,
        })
    }

    pub fn snapshot(&self) -> FlowStateSnapshot {
        FlowStateSnapshot {
            t: self.t,
            step: self.step,
            u: self.u.clone(),
            p: self.p.clone(),
            temp: self.temp.clone(),
            u_hist: self.u_hist.clone(),
            adv_hist: self.adv_hist.clone(),
            temp_hist: self.temp_hist.clone(),
            temp_adv_hist: self.temp_adv_hist.clone(),
            integrator: self.integrator.clone(),
            temp_integrator: self.temp_integrator.clone(),
        }
    }

    pub fn restore(&mut self, snap: &FlowStateSnapshot) {
        self.t = snap.t;
        self.step = snap.step;
        self.u = snap.u.clone();
        self.p = snap.p.clone();
        self.temp = snap.temp.clone();
        self.u_hist = snap.u_hist.clone();
        self.adv_hist = snap.adv_hist.clone();
        self.temp_hist = snap.temp_hist.clone();
        self.temp_adv_hist = snap.temp_adv_hist.clone();
        self.integrator = snap.integrator.clone();
        self.temp_integrator = snap.temp_integrator.clone();
    }
}

/// Deep copy of the evolving state (predictor-corrector re-solves).
pub struct FlowStateSnapshot {
    pub t: f64,
    pub step: u64,
    pub u: [Vec<f64>; 3],
    pub p: Vec<f64>,
    pub temp: Vec<f64>,
    u_hist: VecDeque<[Vec<f64>; 3]>,
    adv_hist: VecDeque<[Vec<f64>; 3]>,
    temp_hist: VecDeque<Vec<f64>>,
    temp_adv_hist: VecDeque<Vec<f64>>,
    integrator: Integrator,
    temp_integrator: Integrator,
}
