//! Multi-session overset coupling: independent sessions on overlapping
//! domains exchange interface data by interpolation each timestep.
//!
//! Each session runs on its own communicator; the interpolation step uses
//! the global communicator so findpts can route queries across sessions
//! (donor elements never come from the querying session). Interface values
//! arrive as a k-th order time extrapolant of donor history and are applied
//! as strong Dirichlet data on Interface-tagged faces. For k > 0 the step
//! is re-solved with corrected data (predictor-corrector).
//!
//! Conjugate heat transfer inside one session is handled by cht_bind:
//! a solid skin mesh is merged conformally with the fluid mesh, the shared
//! C0 discretization providing flux continuity.

use crate::comm::{Comm, ReduceOp};
use crate::error::{Error, Result};
use crate::fields::FieldFn;
use crate::findpts::{FindConfig, FindResult, FindSession, FindStatus};
use crate::mesh::{FaceTag, MeshPartition, Region};
use crate::solver::{pcg, Coefficient, JacobiPrecond, LevelOperator};
use crate::timestepper::{
    advance_flow, advance_scalar, FlowSolvers, FlowState, InterfaceValues, ScalarBc,
    ScalarSolvers, SimDomain,
};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionKind {
    /// fluid flow + temperature (possibly spanning solid CHT regions)
    FluidCht,
    /// temperature only, no advection
    Solid,
}

/// One overset subdomain: mesh, session communicator, physics kind.
pub struct Session {
    pub id: u32,
    pub kind: SessionKind,
    pub dom: SimDomain,
    pub comm: Comm,
}

struct ExchangeRecord {
    t: f64,
    temp: Option<Vec<f64>>,
    vel: Option<[Vec<f64>; 3]>,
}

/// Located interface points plus the received-value time history.
pub struct InterfaceExchange {
    find: FindSession,
    /// local slot per interface point
    pub slots: Vec<u32>,
    pub coords: Vec<[f64; 3]>,
    pub results: Vec<FindResult>,
    /// time-extrapolation order (polynomial degree)
    pub k: usize,
    /// corrector iterations per step (0 allowed only for k = 0)
    pub corrections: usize,
    history: VecDeque<ExchangeRecord>,
    pub want_temp: bool,
    pub want_vel: bool,
    /// set when extrapolation had to fall back to a lower order
    pub order_fallback_logged: bool,
}

/// Gather the session's Interface-face GLL points, run the global findpts
/// setup + find once, and verify every point is resolved in a donor
/// session. Collective over the global communicator; static domains call
/// this once.
pub fn couple_setup(
    session: &Session,
    global: &Comm,
    cfg: FindConfig,
    k: usize,
    corrections: usize,
    want_temp: bool,
    want_vel: bool,
) -> Result<InterfaceExchange> {
    if k > 2 {
        return Err(Error::Config(format!(
            "interface extrapolation order k = {k} (supported 0..=2)"
        )));
    }
    if k > 0 && corrections == 0 {
        return Err(Error::Config(
            "k > 0 interface extrapolation requires at least one corrector iteration".into(),
        ));
    }
    let nodes_per = session.dom.disc.nodes_per_element;
    let mut seen = std::collections::HashSet::new();
    let mut slots = Vec::new();
    let mut coords = Vec::new();
    for bf in &session.dom.bfaces {
        if bf.tag != FaceTag::Interface {
            continue;
        }
        for &ni in &bf.nodes {
            let slot = (bf.elem * nodes_per + ni as usize) as u32;
            if seen.insert(slot) {
                slots.push(slot);
                coords.push(session.dom.disc.coords[bf.elem][ni as usize]);
            }
        }
    }
    let find = FindSession::setup_sessions(&session.dom.mesh, global, cfg, session.id, true)?;
    let results = find.find(&coords, global)?;
    let mut bad = Vec::new();
    for (i, r) in results.iter().enumerate() {
        if r.status == FindStatus::NotFound {
            bad.push((coords[i], r.distance));
        }
    }
    let bad_total = global.allreduce_scalar(bad.len() as f64, ReduceOp::Sum)? as usize;
    if bad_total > 0 {
        let mut msg = format!("{bad_total} interface points unresolved in any donor session");
        for (p, d) in bad.iter().take(3) {
            msg.push_str(&format!(
                "; point ({:.6}, {:.6}, {:.6}) nearest distance {:.3e}",
                p[0], p[1], p[2], d
            ));
        }
        return Err(Error::Setup(msg));
    }
    Ok(InterfaceExchange {
        find,
        slots,
        coords,
        results,
        k,
        corrections,
        history: VecDeque::new(),
        want_temp,
        want_vel,
        order_fallback_logged: false,
    })
}

impl InterfaceExchange {
    /// Donor-side evaluation of the requested fields at time `t`, routed
    /// back and pushed into the history ring. Collective over the global
    /// communicator; all sessions must request the same field set.
    ///
    /// `replace_latest` overwrites the newest ring entry (corrector pass)
    /// instead of pushing.
    pub fn exchange(
        &mut self,
        session: &Session,
        state: &FlowState,
        t: f64,
        replace_latest: bool,
        global: &Comm,
    ) -> Result<()> {
        let _t_total = crate::runtime::stats::scoped("neknek");
        {
            let _t_sync = crate::runtime::stats::scoped("sync");
            global.barrier();
        }
        let _t_ex = crate::runtime::stats::scoped("exchange");
        let mut fields: Vec<&[f64]> = Vec::new();
        if self.want_temp {
            fields.push(&state.temp);
        }
        if self.want_vel {
            fields.push(&state.u[0]);
            fields.push(&state.u[1]);
            fields.push(&state.u[2]);
        }
        let values = {
            let _t_eval = crate::runtime::stats::scoped("eval kernel");
            self.find
                .eval(&session.dom.mesh, &fields, &self.results, global)?
        };
        let mut idx = 0;
        let temp = if self.want_temp {
            idx += 1;
            Some(values[0].clone())
        } else {
            None
        };
        let vel = if self.want_vel {
            Some([
                values[idx].clone(),
                values[idx + 1].clone(),
                values[idx + 2].clone(),
            ])
        } else {
            None
        };
        if replace_latest && !self.history.is_empty() {
            self.history[0] = ExchangeRecord { t, temp, vel };
        } else {
            self.history.push_front(ExchangeRecord { t, temp, vel });
            while self.history.len() > 3 {
                self.history.pop_back();
            }
        }
        Ok(())
    }

    /// Interface Dirichlet data at `t_target`: the k-th order extrapolant
    /// of the history ring. Falls back to the largest available order when
    /// the ring is underfull (logged on the struct).
    pub fn extrapolate(&mut self, t_target: f64) -> Option<InterfaceValues> {
        if self.history.is_empty() {
            return None;
        }
        let avail = self.history.len().min(self.k + 1);
        if avail < self.k + 1 {
            self.order_fallback_logged = true;
        }
        // Lagrange weights at t_target through the `avail` newest records
        let times: Vec<f64> = self.history.iter().take(avail).map(|r| r.t).collect();
        let mut w = vec![1.0; avail];
        for j in 0..avail {
            for m in 0..avail {
                if m != j {
                    w[j] *= (t_target - times[m]) / (times[j] - times[m]);
                }
            }
        }
        let npts = self.slots.len();
        let temp = self.history[0].temp.as_ref().map(|_| {
            let mut out = vec![0.0; npts];
            for (j, wj) in w.iter().enumerate() {
                let rec = self.history[j].temp.as_ref().unwrap();
                for i in 0..npts {
                    out[i] += wj * rec[i];
                }
            }
            out
        });
        let vel = self.history[0].vel.as_ref().map(|_| {
            let mut out: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; npts]);
            for (j, wj) in w.iter().enumerate() {
                let rec = self.history[j].vel.as_ref().unwrap();
                for c in 0..3 {
                    for i in 0..npts {
                        out[c][i] += wj * rec[c][i];
                    }
                }
            }
            out
        });
        Some(InterfaceValues {
            slots: self.slots.clone(),
            temp,
            vel,
        })
    }

    /// Values of the newest ring entry, as Dirichlet data (corrector).
    pub fn latest(&self) -> Option<InterfaceValues> {
        let rec = self.history.front()?;
        Some(InterfaceValues {
            slots: self.slots.clone(),
            temp: rec.temp.clone(),
            vel: rec.vel.clone(),
        })
    }
}

/// Everything one session needs to advance in time.
pub struct SessionRunner {
    pub session: Session,
    pub state: FlowState,
    pub scalar_solvers: ScalarSolvers,
    pub flow_solvers: Option<FlowSolvers>,
    pub scalar_bc: ScalarBc,
    pub props: crate::timestepper::MaterialProps,
    /// velocity prescribed analytically (CHT with frozen flow)
    pub prescribed_velocity: Option<[FieldFn; 3]>,
}

impl SessionRunner {
    pub fn advance(&mut self, dt: f64, iface: Option<&InterfaceValues>, with_advection: bool) -> Result<()> {
        let comm = &self.session.comm;
        if let Some(fs) = self.flow_solvers.as_mut() {
            advance_flow(&self.session.dom, &mut self.state, dt, &self.props, fs, iface, comm)?;
        } else if let Some(vfn) = &self.prescribed_velocity {
            let t_new = self.state.t + dt;
            let n = self.session.dom.disc.n_slots();
            let nodes = self.session.dom.disc.nodes_per_element;
            for c in 0..3 {
                for s in 0..n {
                    self.state.u[c][s] = vfn[c](self.session.dom.disc.slot_coords(s), t_new);
                }
            }
            // frozen flow exists only in fluid elements
            for (e, el) in self.session.dom.mesh.elements.iter().enumerate() {
                if el.region == Region::Solid {
                    for c in 0..3 {
                        for v in &mut self.state.u[c][e * nodes..(e + 1) * nodes] {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        let advect = with_advection && self.session.kind == SessionKind::FluidCht;
        advance_scalar(
            &self.session.dom,
            &mut self.state,
            dt,
            &mut self.scalar_solvers,
            advect,
            &self.scalar_bc,
            iface,
            comm,
        )?;
        self.state.t += dt;
        self.state.step += 1;
        Ok(())
    }
}

/// Advance one session by dt inside the global coupled step: predictor
/// with extrapolated interface data, end-of-step exchange, then the
/// configured number of corrector re-solves with fresh data. All sessions
/// call this collectively (the exchanges synchronize them).
pub fn step_coupled(
    runner: &mut SessionRunner,
    ex: &mut InterfaceExchange,
    dt: f64,
    global: &Comm,
) -> Result<()> {
    let t_new = runner.state.t + dt;
    let with_adv = runner.session.kind == SessionKind::FluidCht
        && runner.session.dom.adv.is_some();
    let iface = ex.extrapolate(t_new);
    let snap = (ex.corrections > 0).then(|| runner.state.snapshot());
    runner.advance(dt, iface.as_ref(), with_adv)?;
    let state_t = runner.state.t;
    {
        // end-of-step exchange at t_{n+1}
        let (session, state) = (&runner.session, &runner.state);
        ex.exchange(session, state, state_t, false, global)?;
    }
    for _ in 0..ex.corrections {
        runner.state.restore(snap.as_ref().unwrap());
        let iface = ex.latest();
        runner.advance(dt, iface.as_ref(), with_adv)?;
        let (session, state) = (&runner.session, &runner.state);
        ex.exchange(session, state, state_t, true, global)?;
    }
    Ok(())
}

/// Outer Schwarz sweeps for steady conduction: each sweep solves the
/// steady problem in every session with the latest interface Dirichlet
/// data, then exchanges. Returns the temperature and the interface deltas
/// per sweep (their decay is the Schwarz contraction).
#[allow(clippy::too_many_arguments)]
pub fn steady_conduction_coupled(
    session: &Session,
    ex: &mut InterfaceExchange,
    kappa: Coefficient,
    q: &[f64],
    bc: &ScalarBc,
    tol: f64,
    max_sweeps: usize,
    global: &Comm,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dom = &session.dom;
    let comm = &session.comm;
    let n = dom.disc.n_slots();
    let nodes = dom.disc.nodes_per_element;
    let mask = crate::solver::build_mask(&dom.mesh, &dom.disc, comm, |t| {
        t == FaceTag::Dirichlet || t == FaceTag::Interface
    })?;
    let op = LevelOperator::new(
        dom.disc.clone(),
        kappa,
        Coefficient::Uniform(0.0),
        mask,
        comm,
    )?;
    let precond = JacobiPrecond::new(&op);
    // base weak rhs: M q + Neumann fluxes
    let mut base = vec![0.0; n];
    for (e, geom) in dom.disc.geom.iter().enumerate() {
        for i in 0..nodes {
            base[e * nodes + i] = geom.mass[i] * q[e * nodes + i];
        }
    }
    for bf in &dom.bfaces {
        if bf.tag != FaceTag::Neumann {
            continue;
        }
        for (idx, &ni) in bf.nodes.iter().enumerate() {
            let slot = bf.elem * nodes + ni as usize;
            let x = dom.disc.coords[bf.elem][ni as usize];
            base[slot] += bf.area_w[idx] * (bc.neumann_flux)(x, bf.normals[idx], 0.0);
        }
    }
    dom.disc.gs.exchange(&mut base, crate::mesh::GsOp::Sum, comm)?;

    let mut temp = vec![0.0; n];
    let mut deltas = Vec::new();
    let mut prev_iface: Option<Vec<f64>> = None;
    let mut state = FlowState::new(n, 1)?;
    for _sweep in 0..max_sweeps {
        // Dirichlet data: analytic walls + interface ring
        let mut t_bc = vec![0.0; n];
        dom.fill_boundary(
            |t| t == FaceTag::Dirichlet || t == FaceTag::Interface,
            &bc.dirichlet,
            0.0,
            &mut t_bc,
        );
        if let Some(iface) = ex.latest() {
            if let Some(vals) = &iface.temp {
                for (i, &slot) in iface.slots.iter().enumerate() {
                    t_bc[slot as usize] = vals[i];
                }
            }
        }
        let mut rhs = base.clone();
        op.lift_dirichlet(&mut rhs, &t_bc, comm)?;
        let mut x = temp.clone();
        op.zero_masked(&mut x);
        let stats = pcg(&op, &precond, &rhs, &mut x, tol, 4000, comm)?;
        if !stats.converged {
            return Err(Error::Solver("steady conduction sweep failed".into()));
        }
        for (i, &m) in op.mask.iter().enumerate() {
            temp[i] = if m { t_bc[i] } else { x[i] };
        }
        state.temp.copy_from_slice(&temp);
        ex.exchange(session, &state, 0.0, false, global)?;
        // interface movement this sweep (global max)
        let latest = ex
            .latest()
            .and_then(|v| v.temp)
            .unwrap_or_default();
        let delta_local = match &prev_iface {
            Some(prev) => latest
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max),
            None => f64::INFINITY,
        };
        let delta = global.allreduce_scalar(
            if delta_local.is_finite() { delta_local } else { 1e30 },
            ReduceOp::Max,
        )?;
        prev_iface = Some(latest);
        if delta < 1e25 {
            deltas.push(delta);
        }
        if delta < tol {
            break;
        }
    }
    Ok((temp, deltas))
}

/// Merge a conformal solid skin into a fluid mesh, producing one CHT
/// session mesh. Shared faces are identified by coordinates; a skin face
/// that only partially matches is a topology error.
pub fn cht_bind(
    fluid: &MeshPartition,
    skin: &MeshPartition,
    comm: &Comm,
) -> Result<MeshPartition> {
    if fluid.order != skin.order {
        return Err(Error::Topology(
            "cht_bind requires matching polynomial orders".into(),
        ));
    }
    let mut merged = fluid.clone();
    for e in &mut merged.elements {
        e.region = Region::Fluid;
    }
    let offset = fluid.e_global;
    for e in &skin.elements {
        let mut el = e.clone();
        el.id += offset;
        el.region = Region::Solid;
        merged.elements.push(el);
    }
    merged.e_global = fluid.e_global + skin.e_global;
    merged.extents = (0, 0, 0);
    // exact face pairing: two boundary faces whose node gid sets coincide
    // become one interior face
    let numbering = crate::mesh::build_numbering(&merged, comm, merged.order)?;
    let disc_dims = crate::ref_element::Dims::cube(merged.order + 1);
    let mut face_keys: std::collections::HashMap<Vec<u64>, Vec<(usize, usize)>> =
        std::collections::HashMap::new();
    for (ei, e) in merged.elements.iter().enumerate() {
        for face in 0..crate::mesh::FACE_COUNT {
            if e.boundary[face] == FaceTag::Interior {
                continue;
            }
            let mut key: Vec<u64> = crate::solver::face_nodes(disc_dims, face)
                .iter()
                .map(|&idx| numbering.gids[ei][idx])
                .collect();
            key.sort_unstable();
            face_keys.entry(key).or_default().push((ei, face));
        }
    }
    let mut matched: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for members in face_keys.values() {
        if members.len() >= 2 {
            for &m in members {
                matched.insert(m);
            }
        }
    }
    // validate: any unmatched boundary face probing into the other region
    // is a nonconforming contact. Probe = face centroid displaced outward.
    let boxes: Vec<(Region, [f64; 3], [f64; 3])> = {
        let mut packed = Vec::new();
        for e in &merged.elements {
            let (lo, hi) = e.bbox();
            packed.push(e.region.to_u8());
            for c in 0..3 {
                packed.extend_from_slice(&lo[c].to_le_bytes());
            }
            for c in 0..3 {
                packed.extend_from_slice(&hi[c].to_le_bytes());
            }
        }
        let gathered = comm.allgather_bytes(&packed)?;
        let mut out = Vec::new();
        for bytes in &gathered {
            for rec in bytes.chunks_exact(49) {
                let region = Region::from_u8(rec[0])?;
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                for c in 0..3 {
                    lo[c] = f64::from_le_bytes(rec[1 + c * 8..9 + c * 8].try_into().unwrap());
                    hi[c] =
                        f64::from_le_bytes(rec[25 + c * 8..33 + c * 8].try_into().unwrap());
                }
                out.push((region, lo, hi));
            }
        }
        out
    };
    for (ei, e) in merged.elements.iter().enumerate() {
        for face in 0..crate::mesh::FACE_COUNT {
            if e.boundary[face] == FaceTag::Interior || matched.contains(&(ei, face)) {
                continue;
            }
            let fnodes = crate::solver::face_nodes(disc_dims, face);
            let mut centroid = [0.0; 3];
            for &idx in &fnodes {
                for c in 0..3 {
                    centroid[c] += e.coords[idx][c];
                }
            }
            for c in &mut centroid {
                *c /= fnodes.len() as f64;
            }
            let own = e.centroid();
            let eps = 1e-3 * e.diameter();
            let mut dir = [0.0; 3];
            let mut norm = 0.0;
            for c in 0..3 {
                dir[c] = centroid[c] - own[c];
                norm += dir[c] * dir[c];
            }
            let norm = norm.sqrt().max(1e-300);
            let probe = [
                centroid[0] + eps * dir[0] / norm,
                centroid[1] + eps * dir[1] / norm,
                centroid[2] + eps * dir[2] / norm,
            ];
            let contact = boxes.iter().any(|(region, lo, hi)| {
                *region != e.region
                    && (0..3).all(|c| probe[c] > lo[c] + 1e-12 && probe[c] < hi[c] - 1e-12)
            });
            if contact {
                return Err(Error::Topology(format!(
                    "nonconforming skin: element {} face {} touches the other region without a matching face",
                    e.id, face
                )));
            }
        }
    }
    for (ei, face) in matched {
        merged.elements[ei].boundary[face] = FaceTag::Interior;
    }
    Ok(merged)
}
