//! BDFk/EXTk advance of the temperature equation. Fluid regions carry the
//! advection term (dealiased, extrapolated); solid regions are pure
//! conduction with their own heat capacity and conductivity.

use crate::comm::Comm;
use crate::error::Result;
use crate::fields::{FieldFn, FluxFn};
use crate::mesh::{FaceTag, GsOp, Region};
use crate::solver::{pcg, Coefficient, JacobiPrecond, LevelOperator, SolveStats};

use super::{FlowState, SimDomain};

/// Interface-face Dirichlet overrides delivered by the overset exchange.
pub struct InterfaceValues {
    /// local slot per interface point
    pub slots: Vec<u32>,
    pub temp: Option<Vec<f64>>,
    pub vel: Option<[Vec<f64>; 3]>,
}

pub struct ScalarBc {
    pub dirichlet: FieldFn,
    /// physical heat flux into the domain on Neumann faces, as a function
    /// of position, outward normal, and time
    pub neumann_flux: FluxFn,
}

impl Default for ScalarBc {
    fn default() -> Self {
        ScalarBc {
            dirichlet: crate::fields::zero(),
            neumann_flux: crate::fields::zero_flux(),
        }
    }
}

/// Temperature solver state: the Helmholtz operator is rebuilt whenever the
/// BDF leading coefficient changes (order ramp-up), which is cheap relative
/// to a solve.
pub struct ScalarSolvers {
    pub kappa: Coefficient,
    pub rho_cp: Coefficient,
    pub tol: f64,
    pub max_it: usize,
    op: Option<LevelOperator<f64>>,
    precond: Option<JacobiPrecond>,
    b0_cached: f64,
    mask: Vec<bool>,
}

impl ScalarSolvers {
    pub fn build(
        dom: &SimDomain,
        comm: &Comm,
        kappa: Coefficient,
        rho_cp: Coefficient,
        tol: f64,
        max_it: usize,
    ) -> Result<Self> {
        let mask = crate::solver::build_mask(&dom.mesh, &dom.disc, comm, |t| {
            t == FaceTag::Dirichlet || t == FaceTag::Interface
        })?;
        Ok(ScalarSolvers {
            kappa,
            rho_cp,
            tol,
            max_it,
            op: None,
            precond: None,
            b0_cached: f64::NAN,
            mask,
        })
    }

    fn ensure_operator(&mut self, dom: &SimDomain, b0: f64, comm: &Comm) -> Result<()> {
        if self.op.is_some() && self.b0_cached == b0 {
            return Ok(());
        }
        let n_elem = dom.disc.n_elements();
        let h_mass = Coefficient::PerElement(
            (0..n_elem).map(|e| self.rho_cp.at(e) * b0).collect(),
        );
        let op = LevelOperator::new(
            dom.disc.clone(),
            self.kappa.clone(),
            h_mass,
            self.mask.clone(),
            comm,
        )?;
        self.precond = Some(JacobiPrecond::new(&op));
        self.op = Some(op);
        self.b0_cached = b0;
        Ok(())
    }

    pub fn operator(&self) -> Option<&LevelOperator<f64>> {
        self.op.as_ref()
    }
}

/// One BDFk/EXTk step of the temperature equation to time t + dt.
/// Solid sessions call with `with_advection = false`.
#[allow(clippy::too_many_arguments)]
pub fn advance_scalar(
    dom: &SimDomain,
    state: &mut FlowState,
    dt: f64,
    solvers: &mut ScalarSolvers,
    with_advection: bool,
    bc: &ScalarBc,
    interface: Option<&InterfaceValues>,
    comm: &Comm,
) -> Result<SolveStats> {
    let n = dom.disc.n_slots();
    let nodes = dom.disc.nodes_per_element;
    let t_new = state.t + dt;

    // advection term at the current time level (makeq)
    let adv_now: Vec<f64> = {
        let _t = crate::runtime::stats::scoped("makeq");
        if with_advection {
            let adv = dom
                .adv
                .as_ref()
                .expect("advection kernel required when with_advection");
            let mut weak = adv.weak_advect(
                &[&state.u[0], &state.u[1], &state.u[2]],
                &state.temp,
            )?;
            // advection lives only in fluid elements
            for (e, el) in dom.mesh.elements.iter().enumerate() {
                if el.region == Region::Solid {
                    for v in &mut weak[e * nodes..(e + 1) * nodes] {
                        *v = 0.0;
                    }
                }
            }
            dom.unweak(&mut weak, comm)?;
            weak
        } else {
            vec![0.0; n]
        }
    };
    state.temp_hist.push_front(state.temp.clone());
    state.temp_adv_hist.push_front(adv_now);
    while state.temp_hist.len() > 3 {
        state.temp_hist.pop_back();
        state.temp_adv_hist.pop_back();
    }

    state.temp_integrator.push_dt(dt);
    let (bdf, ext) = state.temp_integrator.coeffs()?;
    let b0 = bdf[0];
    solvers.ensure_operator(dom, b0, comm)?;
    let op = solvers.op.as_ref().unwrap();
    let precond = solvers.precond.as_ref().unwrap();

    // pointwise explicit right-hand side:
    // q + rho_cp * ( -sum_j bdf_j T^j - EXT(u . grad T) )
    let _t_rhs_scope = crate::runtime::stats::scoped("scalarSolve");
    let mut rhs_weak = {
        let _t = crate::runtime::stats::scoped("rhs");
        let mut val = vec![0.0; n];
        for e in 0..dom.disc.n_elements() {
            let rc = solvers.rho_cp.at(e);
            for i in 0..nodes {
                let s = e * nodes + i;
                let mut hist = 0.0;
                for (j, bj) in bdf.iter().enumerate().skip(1) {
                    hist += bj * state.temp_hist[j - 1][s];
                }
                let mut adv = 0.0;
                for (j, ej) in ext.iter().enumerate() {
                    adv += ej * state.temp_adv_hist[j][s];
                }
                val[s] = state.q[s] + rc * (-hist - adv);
            }
        }
        // weak form with surface flux contributions before assembly
        let mut weak = vec![0.0; n];
        for (e, geom) in dom.disc.geom.iter().enumerate() {
            for i in 0..nodes {
                weak[e * nodes + i] = geom.mass[i] * val[e * nodes + i];
            }
        }
        for bf in &dom.bfaces {
            if bf.tag != FaceTag::Neumann {
                continue;
            }
            for (k, &ni) in bf.nodes.iter().enumerate() {
                let slot = bf.elem * nodes + ni as usize;
                let x = dom.disc.coords[bf.elem][ni as usize];
                weak[slot] += bf.area_w[k] * (bc.neumann_flux)(x, bf.normals[k], t_new);
            }
        }
        dom.disc.gs.exchange(&mut weak, GsOp::Sum, comm)?;
        weak
    };

    // Dirichlet data at the new time, interface faces overridden by the
    // overset exchange
    let mut t_bc = vec![0.0; n];
    dom.fill_boundary(
        |t| t == FaceTag::Dirichlet || t == FaceTag::Interface,
        &bc.dirichlet,
        t_new,
        &mut t_bc,
    );
    if let Some(iface) = interface {
        if let Some(vals) = &iface.temp {
            for (i, &slot) in iface.slots.iter().enumerate() {
                t_bc[slot as usize] = vals[i];
            }
        }
    }
    op.lift_dirichlet(&mut rhs_weak, &t_bc, comm)?;

    // solve from the previous temperature as initial guess
    let mut x = state.temp.clone();
    op.zero_masked(&mut x);
    let stats = pcg(op, precond, &rhs_weak, &mut x, solvers.tol, solvers.max_it, comm)?;
    if !stats.converged {
        return Err(crate::Error::Numerical(format!(
            "temperature solve failed: {} iterations, residual {:.3e}",
            stats.iterations, stats.final_residual
        )));
    }
    for (i, &m) in op.mask.iter().enumerate() {
        state.temp[i] = if m { t_bc[i] } else { x[i] };
    }
    Ok(stats)
}
