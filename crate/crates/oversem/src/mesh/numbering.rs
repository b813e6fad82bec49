//! Global degree-of-freedom numbering from coordinate hashing.
//!
//! Nodes are keyed by per-axis coordinate clusters (sorted 1D clustering
//! with tolerance 1e-9 * domain diameter), so coincident face/edge/vertex
//! nodes of neighboring elements share a global id regardless of which rank
//! owns them or how the mesh was deformed. Every rank derives the numbering
//! from the same allgathered data, which makes gids partition-count
//! invariant.

use crate::comm::Comm;
use crate::error::{Error, Result};
use crate::ref_element::{self, Dims};
use std::collections::HashMap;

use super::MeshPartition;

#[derive(Debug, Clone)]
pub struct Numbering {
    pub order: usize,
    pub n_global: u64,
    /// Per local element, per node (lexicographic): global dof id.
    pub gids: Vec<Vec<u64>>,
    /// Global copy count per local slot.
    pub multiplicity: Vec<u32>,
    /// Sharer world... group ranks per remote-shared gid (ascending),
    /// keyed by gid. Only gids this rank holds are retained.
    pub sharers: HashMap<u64, Vec<usize>>,
    /// Checksum over (gid, global copy count) agreed by all ranks.
    pub checksum: u64,
}

/// Element nodal coordinates interpolated to a target order. For the mesh
/// order this is the identity; for pMG levels the degree-N geometry is
/// sampled on the coarser GLL lattice.
pub fn coords_at_order(mesh: &MeshPartition, order: usize) -> Result<Vec<Vec<[f64; 3]>>> {
    if order == mesh.order {
        return Ok(mesh.elements.iter().map(|e| e.coords.clone()).collect());
    }
    let interp = ref_element::interp(mesh.order, order)?;
    let d = Dims::cube(mesh.order + 1);
    let mut out = Vec::with_capacity(mesh.elements.len());
    for e in &mesh.elements {
        let len = e.coords.len();
        let mut comp = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        for (i, p) in e.coords.iter().enumerate() {
            comp[0][i] = p[0];
            comp[1][i] = p[1];
            comp[2][i] = p[2];
        }
        let mut mapped: Vec<Vec<f64>> = Vec::with_capacity(3);
        for c in &comp {
            let (v, _) = ref_element::interp3(&interp.entries, c, d)?;
            mapped.push(v);
        }
        let m1 = order + 1;
        let mut pts = Vec::with_capacity(m1 * m1 * m1);
        for idx in 0..m1 * m1 * m1 {
            pts.push([mapped[0][idx], mapped[1][idx], mapped[2][idx]]);
        }
        out.push(pts);
    }
    Ok(out)
}

/// Cluster sorted coordinate values: a new cluster starts when the gap to
/// the previous value exceeds tol. Returns cluster index per input value.
fn cluster_axis(values: &mut Vec<(f64, u32)>, tol: f64, out: &mut [u32]) {
    values.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut cluster = 0u32;
    let mut prev = f64::NEG_INFINITY;
    for &(v, src) in values.iter() {
        if v - prev > tol {
            cluster += 1;
        }
        out[src as usize] = cluster - 1;
        prev = v;
    }
}

/// Build the numbering for a partition at the given order (collective).
pub fn build_numbering(mesh: &MeshPartition, comm: &Comm, order: usize) -> Result<Numbering> {
    let coords = coords_at_order(mesh, order)?;
    // pack (element id, rank, lattice) and allgather
    let m1 = order + 1;
    let nodes_per = m1 * m1 * m1;
    let mut packed = Vec::with_capacity(mesh.elements.len() * (12 + nodes_per * 24));
    for (e, pts) in mesh.elements.iter().zip(&coords) {
        packed.extend_from_slice(&e.id.to_le_bytes());
        packed.extend_from_slice(&(comm.rank() as u32).to_le_bytes());
        for p in pts {
            for c in 0..3 {
                packed.extend_from_slice(&p[c].to_le_bytes());
            }
        }
    }
    let gathered = comm.allgather_bytes(&packed)?;
    // unpack into a deterministic element list sorted by element id
    struct Rec {
        id: u64,
        rank: usize,
        pts: Vec<[f64; 3]>,
    }
    let mut recs: Vec<Rec> = Vec::new();
    for bytes in &gathered {
        let stride = 12 + nodes_per * 24;
        assert!(bytes.len() % stride == 0, "corrupt numbering exchange");
        for chunk in bytes.chunks_exact(stride) {
            let id = u64::from_le_bytes(chunk[0..8].try_into().unwrap());
            let rank = u32::from_le_bytes(chunk[8..12].try_into().unwrap()) as usize;
            let mut pts = Vec::with_capacity(nodes_per);
            for n in 0..nodes_per {
                let off = 12 + n * 24;
                pts.push([
                    f64::from_le_bytes(chunk[off..off + 8].try_into().unwrap()),
                    f64::from_le_bytes(chunk[off + 8..off + 16].try_into().unwrap()),
                    f64::from_le_bytes(chunk[off + 16..off + 24].try_into().unwrap()),
                ]);
            }
            recs.push(Rec { id, rank, pts });
        }
    }
    recs.sort_by_key(|r| r.id);
    if recs.is_empty() {
        return Err(Error::Setup("numbering over an empty mesh".into()));
    }

    // tolerance from the global bounding box
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in &recs {
        for p in &r.pts {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
    }
    let diam = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt();
    let tol = 1e-9 * diam.max(1e-300);

    // per-axis clustering
    let total_nodes = recs.len() * nodes_per;
    let mut keys = vec![[0u32; 3]; total_nodes];
    for axis in 0..3 {
        let mut vals: Vec<(f64, u32)> = Vec::with_capacity(total_nodes);
        for (ei, r) in recs.iter().enumerate() {
            for (ni, p) in r.pts.iter().enumerate() {
                vals.push((p[axis], (ei * nodes_per + ni) as u32));
            }
        }
        let mut out = vec![0u32; total_nodes];
        cluster_axis(&mut vals, tol, &mut out);
        for (i, c) in out.into_iter().enumerate() {
            keys[i][axis] = c;
        }
    }

    // sorted unique keys define the dense gid space
    let mut unique = keys.clone();
    unique.sort_unstable();
    unique.dedup();
    let gid_of: HashMap<[u32; 3], u64> = unique
        .iter()
        .enumerate()
        .map(|(i, k)| (*k, i as u64))
        .collect();
    let n_global = unique.len() as u64;

    // global multiplicity and sharer sets
    let mut mult: Vec<u32> = vec![0; unique.len()];
    let mut rank_sets: HashMap<u64, Vec<usize>> = HashMap::new();
    for (ei, r) in recs.iter().enumerate() {
        for ni in 0..nodes_per {
            let gid = gid_of[&keys[ei * nodes_per + ni]];
            mult[gid as usize] += 1;
            let set = rank_sets.entry(gid).or_default();
            if !set.contains(&r.rank) {
                set.push(r.rank);
            }
        }
    }
    for set in rank_sets.values_mut() {
        set.sort_unstable();
    }

    // my local view
    let my_rank = comm.rank();
    let mut gids: Vec<Vec<u64>> = Vec::with_capacity(mesh.elements.len());
    let mut multiplicity: Vec<u32> = Vec::with_capacity(mesh.elements.len() * nodes_per);
    let mut sharers: HashMap<u64, Vec<usize>> = HashMap::new();
    // map from element id -> position in recs (recs are sorted by id)
    let pos_of: HashMap<u64, usize> = recs.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
    for e in &mesh.elements {
        let ei = pos_of[&e.id];
        let mut egids = Vec::with_capacity(nodes_per);
        for ni in 0..nodes_per {
            let gid = gid_of[&keys[ei * nodes_per + ni]];
            egids.push(gid);
            multiplicity.push(mult[gid as usize]);
            let set = &rank_sets[&gid];
            if set.len() > 1 {
                sharers.insert(gid, set.clone());
            }
        }
        gids.push(egids);
    }
    let _ = my_rank;

    // checksum: every rank must agree on (n_global, sum gid*mult)
    let mut csum = n_global;
    for (g, &m) in mult.iter().enumerate() {
        csum = csum
            .wrapping_mul(1099511628211)
            .wrapping_add((g as u64).wrapping_mul(m as u64 + 1));
    }
    Ok(Numbering {
        order,
        n_global,
        gids,
        multiplicity,
        sharers,
        checksum: csum,
    })
}
