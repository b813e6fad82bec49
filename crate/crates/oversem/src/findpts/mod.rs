//! Scalable off-grid interpolation: locate arbitrary physical points in a
//! distributed mesh (owning rank, element, reference coordinates) and
//! evaluate nodal fields there at spectral accuracy.
//!
//! Three phases, all collectives over the supplied communicator:
//! 1. [`FindSession::setup`] — local geometry capture plus global/local
//!    hash construction (the global hash is replicated by allgather).
//! 2. [`FindSession::find`] — queries travel to candidate ranks through the
//!    crystal router, are narrowed by the local hash, Newton-inverted on
//!    candidate elements, and the best answers return to the query rank.
//! 3. [`FindSession::eval`] — nodal fields are evaluated at the stored
//!    reference coordinates on the owning ranks and routed back; points
//!    sharing an element are batched through one basis-row application.

mod hash;
mod newton;

pub use hash::HashGrid;
pub use newton::{eval_map, newton_invert, NewtonResult};

use crate::comm::{Comm, ReduceOp, RoutedMessage};
use crate::error::{Error, Result};
use crate::mesh::MeshPartition;
use crate::ref_element::{self, ElementBasis};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindStatus {
    Interior,
    Border,
    NotFound,
}

/// Answer to an off-grid query: owning rank, local element id there, and
/// the reference coordinates of the point in that element.
#[derive(Debug, Clone, Copy)]
pub struct FindResult {
    pub status: FindStatus,
    pub rank: usize,
    pub element: usize,
    pub rstar: [f64; 3],
    pub distance: f64,
}

impl FindResult {
    pub fn not_found() -> Self {
        FindResult {
            status: FindStatus::NotFound,
            rank: usize::MAX,
            element: 0,
            rstar: [f64::NAN; 3],
            distance: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FindConfig {
    /// Element bbox padding relative to element diameter (curvature slack).
    pub padding_rel: f64,
    /// Global hash target cell count as a multiple of E_global.
    pub global_cells_factor: f64,
    /// Local hash target cell count as a multiple of local element count.
    pub local_cells_factor: f64,
    /// |r*| within this of 1 classifies as border.
    pub border_tol: f64,
    /// Acceptance threshold: relative distance above this means not found.
    pub notfound_rel: f64,
}

impl Default for FindConfig {
    fn default() -> Self {
        FindConfig {
            padding_rel: 1e-2,
            global_cells_factor: 2.0,
            local_cells_factor: 2.0,
            border_tol: 1e-8,
            notfound_rel: 1e-10,
        }
    }
}

struct ElemGeom {
    coords: [Vec<f64>; 3],
    bbox_lo: [f64; 3],
    bbox_hi: [f64; 3],
    center: [f64; 3],
    diameter: f64,
}

pub struct FindSession {
    pub cfg: FindConfig,
    pub global_hash: HashGrid,
    pub local_hash: HashGrid,
    basis: Arc<ElementBasis>,
    elems: Vec<ElemGeom>,
    mesh_revision: u64,
    /// session id per world rank (all zero outside overset coupling)
    session_of_rank: Vec<u32>,
    my_session: u32,
    /// skip candidate ranks of the query's own session (overset mode)
    exclude_own_session: bool,
}

const TAG_BASE_QUERY: u64 = 1 << 40;
const TAG_BASE_REPLY: u64 = 2 << 40;
const TAG_BASE_EVALQ: u64 = 3 << 40;
const TAG_BASE_EVALR: u64 = 4 << 40;
const TAG_IDX_MASK: u64 = (1 << 40) - 1;

impl FindSession {
    /// Plain setup: one mesh spanning the whole communicator.
    pub fn setup(mesh: &MeshPartition, comm: &Comm, cfg: FindConfig) -> Result<FindSession> {
        Self::setup_sessions(mesh, comm, cfg, 0, false)
    }

    /// Overset-aware setup: each rank belongs to a session; queries carry
    /// their session id and, when `exclude_own_session` is set, are only
    /// answered by donor ranks of other sessions.
    pub fn setup_sessions(
        mesh: &MeshPartition,
        comm: &Comm,
        cfg: FindConfig,
        my_session: u32,
        exclude_own_session: bool,
    ) -> Result<FindSession> {
        let e_total = comm.allreduce_u64(mesh.elements.len() as u64, ReduceOp::Sum)?;
        if e_total == 0 {
            return Err(Error::Setup("findpts setup over an empty mesh".into()));
        }
        // local geometry
        let mut elems = Vec::with_capacity(mesh.elements.len());
        for e in &mesh.elements {
            let (lo, hi) = e.bbox();
            let diameter = e.diameter();
            let pad = cfg.padding_rel * diameter;
            let bbox_lo = [lo[0] - pad, lo[1] - pad, lo[2] - pad];
            let bbox_hi = [hi[0] + pad, hi[1] + pad, hi[2] + pad];
            let mut coords = [
                Vec::with_capacity(e.coords.len()),
                Vec::with_capacity(e.coords.len()),
                Vec::with_capacity(e.coords.len()),
            ];
            for p in &e.coords {
                coords[0].push(p[0]);
                coords[1].push(p[1]);
                coords[2].push(p[2]);
            }
            elems.push(ElemGeom {
                coords,
                bbox_lo,
                bbox_hi,
                center: [
                    0.5 * (lo[0] + hi[0]),
                    0.5 * (lo[1] + hi[1]),
                    0.5 * (lo[2] + hi[2]),
                ],
                diameter,
            });
        }
        // allgather (session, element bboxes) per rank
        let mut packed = Vec::with_capacity(elems.len() * 48 + 4);
        packed.extend_from_slice(&my_session.to_le_bytes());
        for e in &elems {
            for c in 0..3 {
                packed.extend_from_slice(&e.bbox_lo[c].to_le_bytes());
            }
            for c in 0..3 {
                packed.extend_from_slice(&e.bbox_hi[c].to_le_bytes());
            }
        }
        let gathered = comm.allgather_bytes(&packed)?;
        let mut session_of_rank = vec![0u32; comm.size()];
        let mut glo = [f64::INFINITY; 3];
        let mut ghi = [f64::NEG_INFINITY; 3];
        let mut rank_boxes: Vec<(usize, [f64; 3], [f64; 3])> = Vec::new();
        for (r, bytes) in gathered.iter().enumerate() {
            session_of_rank[r] = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
            let body = &bytes[4..];
            for rec in body.chunks_exact(48) {
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                for c in 0..3 {
                    lo[c] = f64::from_le_bytes(rec[c * 8..c * 8 + 8].try_into().unwrap());
                    hi[c] =
                        f64::from_le_bytes(rec[24 + c * 8..24 + c * 8 + 8].try_into().unwrap());
                }
                for c in 0..3 {
                    glo[c] = glo[c].min(lo[c]);
                    ghi[c] = ghi[c].max(hi[c]);
                }
                rank_boxes.push((r, lo, hi));
            }
        }
        let target = (cfg.global_cells_factor * e_total as f64).ceil() as usize;
        let mut global_hash = HashGrid::new(glo, ghi, target);
        for (r, lo, hi) in &rank_boxes {
            global_hash.insert_bbox(*lo, *hi, *r as u32);
        }
        global_hash.finalize();
        // local hash over this rank's padded bbox
        let mut llo = [f64::INFINITY; 3];
        let mut lhi = [f64::NEG_INFINITY; 3];
        for e in &elems {
            for c in 0..3 {
                llo[c] = llo[c].min(e.bbox_lo[c]);
                lhi[c] = lhi[c].max(e.bbox_hi[c]);
            }
        }
        if elems.is_empty() {
            llo = [0.0; 3];
            lhi = [0.0; 3];
        }
        let ltarget = (cfg.local_cells_factor * elems.len().max(1) as f64).ceil() as usize;
        let mut local_hash = HashGrid::new(llo, lhi, ltarget);
        for (i, e) in elems.iter().enumerate() {
            local_hash.insert_bbox(e.bbox_lo, e.bbox_hi, i as u32);
        }
        local_hash.finalize();
        Ok(FindSession {
            cfg,
            global_hash,
            local_hash,
            basis: ref_element::basis(mesh.order)?,
            elems,
            mesh_revision: mesh.revision,
            session_of_rank,
            my_session,
            exclude_own_session,
        })
    }

    pub fn n_local_elements(&self) -> usize {
        self.elems.len()
    }

    /// Seed for the Newton iteration: reference coordinates of the nearest
    /// nodal lattice point.
    fn best_seed(&self, elem: usize, x: [f64; 3]) -> [f64; 3] {
        let e = &self.elems[elem];
        let n1 = self.basis.n1();
        let nodes = &self.basis.rule.nodes;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for idx in 0..e.coords[0].len() {
            let dx = e.coords[0][idx] - x[0];
            let dy = e.coords[1][idx] - x[1];
            let dz = e.coords[2][idx] - x[2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < best_d {
                best_d = d;
                best = idx;
            }
        }
        let i = best % n1;
        let j = (best / n1) % n1;
        let k = best / (n1 * n1);
        [nodes[i], nodes[j], nodes[k]]
    }

    /// Search one point against local candidates (hash-narrowed). Returns
    /// (element, newton result, relative distance) of the best candidate.
    fn search_local(&self, x: [f64; 3]) -> Option<(usize, NewtonResult, f64)> {
        let mut cand: Vec<u32> = self.local_hash.candidates(x).to_vec();
        cand.sort_by(|&a, &b| {
            let da = center_dist2(&self.elems[a as usize], x);
            let db = center_dist2(&self.elems[b as usize], x);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        let mut best: Option<(usize, NewtonResult, f64)> = None;
        for c in cand {
            let ei = c as usize;
            let e = &self.elems[ei];
            // cheap bbox rejection (hash cells overcover)
            if (0..3).any(|a| x[a] < e.bbox_lo[a] || x[a] > e.bbox_hi[a]) {
                continue;
            }
            let seed = self.best_seed(ei, x);
            let r = newton_invert(&e.coords, &self.basis, x, seed, e.diameter);
            let rel = r.distance / e.diameter.max(1e-300);
            let better = match &best {
                None => true,
                Some((be, bres, _)) => (r.distance, ei) < (bres.distance, *be),
            };
            if better {
                best = Some((ei, r, rel));
            }
            // a strictly interior converged hit cannot be beaten within a
            // session (elements overlap only at faces)
            let interior = r.rstar.iter().all(|v| v.abs() < 1.0 - self.cfg.border_tol);
            if interior && r.converged && rel <= 1e-12 {
                break;
            }
        }
        best
    }

    /// Locate a batch of points (collective). Results return to the query
    /// rank in input order.
    pub fn find(&self, points: &[[f64; 3]], comm: &Comm) -> Result<Vec<FindResult>> {
        let me = comm.rank();
        let mut outbox: Vec<RoutedMessage> = Vec::new();
        for (pi, &x) in points.iter().enumerate() {
            let mut payload = Vec::with_capacity(28);
            for c in 0..3 {
                payload.extend_from_slice(&x[c].to_le_bytes());
            }
            payload.extend_from_slice(&self.my_session.to_le_bytes());
            for &r in self.global_hash.candidates(x) {
                if self.exclude_own_session && self.session_of_rank[r as usize] == self.my_session
                {
                    continue;
                }
                outbox.push(RoutedMessage::new(
                    r as usize,
                    me,
                    TAG_BASE_QUERY | pi as u64,
                    payload.clone(),
                ));
            }
        }
        let (queries, _) = comm.crystal_route(outbox)?;
        // answer every query with the best local candidate
        let mut replies: Vec<RoutedMessage> = Vec::new();
        for q in &queries {
            let x = [
                f64::from_le_bytes(q.payload[0..8].try_into().unwrap()),
                f64::from_le_bytes(q.payload[8..16].try_into().unwrap()),
                f64::from_le_bytes(q.payload[16..24].try_into().unwrap()),
            ];
            let qsession = u32::from_le_bytes(q.payload[24..28].try_into().unwrap());
            if self.exclude_own_session && qsession == self.my_session {
                continue;
            }
            let mut payload = Vec::with_capacity(48);
            match self.search_local(x) {
                Some((elem, r, rel)) => {
                    payload.push(1u8);
                    payload.push(r.converged as u8);
                    payload.extend_from_slice(&(elem as u32).to_le_bytes());
                    for c in 0..3 {
                        payload.extend_from_slice(&r.rstar[c].to_le_bytes());
                    }
                    payload.extend_from_slice(&r.distance.to_le_bytes());
                    payload.extend_from_slice(&rel.to_le_bytes());
                }
                None => payload.push(0u8),
            }
            replies.push(RoutedMessage::new(
                q.source_rank,
                me,
                TAG_BASE_REPLY | (q.tag & TAG_IDX_MASK),
                payload,
            ));
        }
        let (answers, _) = comm.crystal_route(replies)?;
        // pick the best answer per point: (distance, rank, element)
        let mut best: Vec<FindResult> = vec![FindResult::not_found(); points.len()];
        let mut best_key: Vec<(f64, usize, usize)> =
            vec![(f64::INFINITY, usize::MAX, usize::MAX); points.len()];
        for a in &answers {
            let pi = (a.tag & TAG_IDX_MASK) as usize;
            if a.payload[0] == 0 {
                continue;
            }
            let converged = a.payload[1] != 0;
            let elem = u32::from_le_bytes(a.payload[2..6].try_into().unwrap()) as usize;
            let mut rstar = [0.0; 3];
            for c in 0..3 {
                rstar[c] = f64::from_le_bytes(a.payload[6 + c * 8..14 + c * 8].try_into().unwrap());
            }
            let dist = f64::from_le_bytes(a.payload[30..38].try_into().unwrap());
            let rel = f64::from_le_bytes(a.payload[38..46].try_into().unwrap());
            if !converged || rel > self.cfg.notfound_rel {
                continue;
            }
            let key = (dist, a.source_rank, elem);
            if key < best_key[pi] {
                best_key[pi] = key;
                let border = rstar.iter().any(|v| v.abs() >= 1.0 - self.cfg.border_tol);
                best[pi] = FindResult {
                    status: if border {
                        FindStatus::Border
                    } else {
                        FindStatus::Interior
                    },
                    rank: a.source_rank,
                    element: elem,
                    rstar,
                    distance: dist,
                };
            }
        }
        Ok(best)
    }

    /// Evaluate one or more nodal fields at previously found points
    /// (collective). `fields` are this rank's local nodal arrays; output is
    /// values[field][point], NaN where not found. Fails if the mesh has
    /// been deformed since the find.
    pub fn eval(
        &self,
        mesh: &MeshPartition,
        fields: &[&[f64]],
        results: &[FindResult],
        comm: &Comm,
    ) -> Result<Vec<Vec<f64>>> {
        if mesh.revision != self.mesh_revision {
            return Err(Error::State(
                "findpts results are stale: mesh changed since setup/find".into(),
            ));
        }
        let me = comm.rank();
        let nodes_per = self.basis.n1().pow(3);
        for f in fields {
            if f.len() != self.elems.len() * nodes_per {
                return Err(Error::Shape(format!(
                    "field length {} != local slots {}",
                    f.len(),
                    self.elems.len() * nodes_per
                )));
            }
        }
        let nf = fields.len();
        let mut outbox: Vec<RoutedMessage> = Vec::new();
        for (pi, r) in results.iter().enumerate() {
            if r.status == FindStatus::NotFound {
                continue;
            }
            let mut payload = Vec::with_capacity(28);
            payload.extend_from_slice(&(r.element as u32).to_le_bytes());
            for c in 0..3 {
                payload.extend_from_slice(&r.rstar[c].to_le_bytes());
            }
            outbox.push(RoutedMessage::new(
                r.rank,
                me,
                TAG_BASE_EVALQ | pi as u64,
                payload,
            ));
        }
        let (queries, _) = comm.crystal_route(outbox)?;
        // batch received queries per element: one basis-row application
        // serves every field for every point of the batch
        let mut by_elem: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (qi, q) in queries.iter().enumerate() {
            let elem = u32::from_le_bytes(q.payload[0..4].try_into().unwrap()) as usize;
            if elem >= self.elems.len() {
                return Err(Error::State(format!("eval for unknown local element {elem}")));
            }
            by_elem.entry(elem).or_default().push(qi);
        }
        let mut replies: Vec<RoutedMessage> = Vec::with_capacity(queries.len());
        let mut row = vec![0.0; nodes_per];
        for (elem, qis) in by_elem {
            for &qi in &qis {
                let q = &queries[qi];
                let mut rst = [0.0; 3];
                for c in 0..3 {
                    rst[c] =
                        f64::from_le_bytes(q.payload[4 + c * 8..12 + c * 8].try_into().unwrap());
                }
                basis_row(&self.basis, rst, &mut row);
                let mut payload = Vec::with_capacity(nf * 8);
                for f in fields {
                    let base = elem * nodes_per;
                    let mut s = 0.0;
                    for idx in 0..nodes_per {
                        s += row[idx] * f[base + idx];
                    }
                    crate::flops::add_fp64(2 * nodes_per as u64);
                    payload.extend_from_slice(&s.to_le_bytes());
                }
                replies.push(RoutedMessage::new(
                    q.source_rank,
                    me,
                    TAG_BASE_EVALR | (q.tag & TAG_IDX_MASK),
                    payload,
                ));
            }
        }
        let (answers, _) = comm.crystal_route(replies)?;
        let mut out = vec![vec![f64::NAN; results.len()]; nf];
        for a in &answers {
            let pi = (a.tag & TAG_IDX_MASK) as usize;
            for (fi, chunk) in a.payload.chunks_exact(8).enumerate() {
                out[fi][pi] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        Ok(out)
    }
}

fn center_dist2(e: &ElemGeom, x: [f64; 3]) -> f64 {
    let dx = e.center[0] - x[0];
    let dy = e.center[1] - x[1];
    let dz = e.center[2] - x[2];
    dx * dx + dy * dy + dz * dz
}

/// Lexicographic basis row at a reference point: row[ijk] = h_i h_j h_k.
pub fn basis_row(basis: &ElementBasis, rst: [f64; 3], row: &mut [f64]) {
    let n1 = basis.n1();
    let mut h = [vec![0.0; n1], vec![0.0; n1], vec![0.0; n1]];
    let mut scratch = vec![0.0; n1];
    for a in 0..3 {
        basis.basis_at(rst[a], &mut h[a], &mut scratch);
    }
    let mut idx = 0;
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                row[idx] = h[0][i] * h[1][j] * h[2][k];
                idx += 1;
            }
        }
    }
}

/// Evaluate a nodal element field at a reference point by the lexicographic
/// sum (the batched-eval summation order).
pub fn eval_at_rst_lex(field: &[f64], basis: &ElementBasis, rst: [f64; 3]) -> f64 {
    let mut row = vec![0.0; field.len()];
    basis_row(basis, rst, &mut row);
    let mut s = 0.0;
    for i in 0..field.len() {
        s += row[i] * field[i];
    }
    s
}

/// Evaluate by tensor factorization (contract i, then j, then k) — a
/// different summation order, equal to the lexicographic path to roundoff.
pub fn eval_at_rst_factored(field: &[f64], basis: &ElementBasis, rst: [f64; 3]) -> f64 {
    let n1 = basis.n1();
    let mut h = [vec![0.0; n1], vec![0.0; n1], vec![0.0; n1]];
    let mut scratch = vec![0.0; n1];
    for a in 0..3 {
        basis.basis_at(rst[a], &mut h[a], &mut scratch);
    }
    let mut f1 = vec![0.0; n1 * n1];
    for k in 0..n1 {
        for j in 0..n1 {
            let base = n1 * (j + n1 * k);
            let mut s = 0.0;
            for i in 0..n1 {
                s += field[base + i] * h[0][i];
            }
            f1[j + n1 * k] = s;
        }
    }
    let mut f2 = vec![0.0; n1];
    for k in 0..n1 {
        let mut s = 0.0;
        for j in 0..n1 {
            s += f1[j + n1 * k] * h[1][j];
        }
        f2[k] = s;
    }
    let mut v = 0.0;
    for k in 0..n1 {
        v += f2[k] * h[2][k];
    }
    v
}
