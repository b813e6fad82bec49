//! Curvilinear hexahedral meshes: isoparametric geometry, global numbering,
//! and the C0 gather-scatter (direct stiffness summation) operator.
//!
//! Meshes are generated as structured boxes (lexicographic block partition
//! across ranks) and may be deformed by any smooth orientation-preserving
//! map; shared-face identification is coordinate-based, so deformed meshes
//! need no topological bookkeeping.

mod discretization;
mod gather_scatter;
mod geom;
pub mod io;
mod numbering;

pub use discretization::Discretization;
pub use gather_scatter::{GatherScatter, GsOp};
pub use geom::{compute_geom_factors, GeomFactors};
pub use numbering::{build_numbering, Numbering};

use crate::comm::Comm;
use crate::error::{Error, Result};
use crate::ref_element;

/// Axis-aligned box domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl BoxSpec {
    pub fn unit() -> Self {
        Self {
            lo: [0.0; 3],
            hi: [1.0; 3],
        }
    }

    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn diameter(&self) -> f64 {
        let d = [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// Per-face boundary tag. Interface faces are resolved by the overset
/// coupling; periodic boundaries are not supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    Interior,
    Dirichlet,
    Neumann,
    Interface,
}

impl FaceTag {
    pub fn to_u8(self) -> u8 {
        match self {
            FaceTag::Interior => 0,
            FaceTag::Dirichlet => 1,
            FaceTag::Neumann => 2,
            FaceTag::Interface => 3,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => FaceTag::Interior,
            1 => FaceTag::Dirichlet,
            2 => FaceTag::Neumann,
            3 => FaceTag::Interface,
            other => return Err(Error::Topology(format!("unknown face tag {other}"))),
        })
    }
}

/// Element material region, used by conjugate heat transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Fluid,
    Solid,
}

impl Region {
    pub fn to_u8(self) -> u8 {
        match self {
            Region::Fluid => 0,
            Region::Solid => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Region::Fluid,
            1 => Region::Solid,
            other => return Err(Error::Topology(format!("unknown region tag {other}"))),
        })
    }
}

/// Face index convention: 0:r- 1:r+ 2:s- 3:s+ 4:t- 5:t+.
pub const FACE_COUNT: usize = 6;

/// One curvilinear hex element: the image of the GLL lattice under the
/// isoparametric map, stored lexicographically with i (the r index) fastest.
#[derive(Debug, Clone)]
pub struct Element {
    pub id: u64,
    pub order: usize,
    pub coords: Vec<[f64; 3]>,
    pub boundary: [FaceTag; FACE_COUNT],
    pub region: Region,
}

impl Element {
    pub fn n1(&self) -> usize {
        self.order + 1
    }

    pub fn n_nodes(&self) -> usize {
        let n1 = self.n1();
        n1 * n1 * n1
    }

    /// Axis-aligned bounding box of the nodal coordinates.
    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.coords {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bbox();
        let d = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.coords {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.coords.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }
}

/// The elements owned by one rank plus the global layout metadata needed
/// to reason about the whole mesh.
#[derive(Debug, Clone)]
pub struct MeshPartition {
    pub order: usize,
    pub extents: (usize, usize, usize),
    pub domain: BoxSpec,
    pub e_global: u64,
    pub n_ranks: usize,
    pub rank: usize,
    pub elements: Vec<Element>,
    /// Bumped whenever coordinates change (deform); findpts sessions use it
    /// to detect stale results.
    pub revision: u64,
}

impl MeshPartition {
    /// Reported gridpoint count n = E * N^3 (the usual SEM accounting).
    pub fn gridpoints(&self) -> u64 {
        let n = self.order as u64;
        self.e_global * n * n * n
    }

    pub fn n_local_slots(&self) -> usize {
        self.elements.len() * (self.order + 1).pow(3)
    }

    /// Restrict to the elements of one region, keeping ids and tags. The
    /// subset behaves as a mesh of its own: numbering, gather-scatter and
    /// operators are rebuilt on it. `e_global` must be refreshed
    /// collectively by the caller (see [`refresh_global_count`]).
    pub fn subset(&self, region: Region) -> MeshPartition {
        let elements: Vec<Element> = self
            .elements
            .iter()
            .filter(|e| e.region == region)
            .cloned()
            .collect();
        MeshPartition {
            order: self.order,
            extents: self.extents,
            domain: self.domain,
            e_global: 0,
            n_ranks: self.n_ranks,
            rank: self.rank,
            elements,
            revision: self.revision,
        }
    }
}

/// Recompute `e_global` as the sum of local element counts (collective).
pub fn refresh_global_count(mesh: &mut MeshPartition, comm: &Comm) -> Result<()> {
    mesh.e_global = comm.allreduce_u64(mesh.elements.len() as u64, crate::comm::ReduceOp::Sum)?;
    Ok(())
}

/// Contiguous share of [0, e_global) owned by `rank` out of `p`.
pub fn partition_range(e_global: u64, p: usize, rank: usize) -> (u64, u64) {
    let p = p as u64;
    let r = rank as u64;
    (e_global * r / p, e_global * (r + 1) / p)
}

/// Build a structured box mesh of Ex x Ey x Ez affine elements at the given
/// order, lexicographically block-partitioned across the communicator.
/// Domain-boundary faces are tagged Dirichlet; interior faces Interior.
pub fn build_box_mesh(
    extents: (usize, usize, usize),
    domain: BoxSpec,
    order: usize,
    comm: &Comm,
) -> Result<MeshPartition> {
    build_box_mesh_for_rank(extents, domain, order, comm.size(), comm.rank())
}

/// Serial variant: construct the partition a given (p, rank) pair would own.
pub fn build_box_mesh_for_rank(
    extents: (usize, usize, usize),
    domain: BoxSpec,
    order: usize,
    p: usize,
    rank: usize,
) -> Result<MeshPartition> {
    let (ex, ey, ez) = extents;
    if ex < 1 || ey < 1 || ez < 1 {
        return Err(Error::Partition(format!(
            "extents must be at least 1x1x1, got {ex}x{ey}x{ez}"
        )));
    }
    let e_global = (ex * ey * ez) as u64;
    if (p as u64) > e_global {
        return Err(Error::Partition(format!(
            "cannot partition {e_global} elements across {p} ranks"
        )));
    }
    let basis = ref_element::basis(order)?;
    let nodes = &basis.rule.nodes;
    let n1 = order + 1;
    let h = [
        (domain.hi[0] - domain.lo[0]) / ex as f64,
        (domain.hi[1] - domain.lo[1]) / ey as f64,
        (domain.hi[2] - domain.lo[2]) / ez as f64,
    ];
    let (start, end) = partition_range(e_global, p, rank);
    let mut elements = Vec::with_capacity((end - start) as usize);
    for id in start..end {
        let idx = id as usize;
        let ix = idx % ex;
        let iy = (idx / ex) % ey;
        let iz = idx / (ex * ey);
        let cell_lo = [
            domain.lo[0] + ix as f64 * h[0],
            domain.lo[1] + iy as f64 * h[1],
            domain.lo[2] + iz as f64 * h[2],
        ];
        let mut coords = Vec::with_capacity(n1 * n1 * n1);
        for k in 0..n1 {
            for j in 0..n1 {
                for i in 0..n1 {
                    coords.push([
                        cell_lo[0] + 0.5 * (nodes[i] + 1.0) * h[0],
                        cell_lo[1] + 0.5 * (nodes[j] + 1.0) * h[1],
                        cell_lo[2] + 0.5 * (nodes[k] + 1.0) * h[2],
                    ]);
                }
            }
        }
        let mut boundary = [FaceTag::Interior; FACE_COUNT];
        if ix == 0 {
            boundary[0] = FaceTag::Dirichlet;
        }
        if ix == ex - 1 {
            boundary[1] = FaceTag::Dirichlet;
        }
        if iy == 0 {
            boundary[2] = FaceTag::Dirichlet;
        }
        if iy == ey - 1 {
            boundary[3] = FaceTag::Dirichlet;
        }
        if iz == 0 {
            boundary[4] = FaceTag::Dirichlet;
        }
        if iz == ez - 1 {
            boundary[5] = FaceTag::Dirichlet;
        }
        elements.push(Element {
            id,
            order,
            coords,
            boundary,
            region: Region::Fluid,
        });
    }
    Ok(MeshPartition {
        order,
        extents,
        domain,
        e_global,
        n_ranks: p,
        rank,
        elements,
        revision: 0,
    })
}

/// Retag all domain-boundary faces of a generated box mesh; the callback
/// receives (axis 0..3, side false=lo true=hi).
pub fn retag_boundary(mesh: &mut MeshPartition, f: impl Fn(usize, bool) -> FaceTag) {
    for e in &mut mesh.elements {
        for face in 0..FACE_COUNT {
            if e.boundary[face] != FaceTag::Interior {
                let axis = face / 2;
                let side = face % 2 == 1;
                e.boundary[face] = f(axis, side);
            }
        }
    }
}

/// Assign regions by element centroid.
pub fn assign_regions(mesh: &mut MeshPartition, f: impl Fn([f64; 3]) -> Region) {
    for e in &mut mesh.elements {
        e.region = f(e.centroid());
    }
}

/// Apply a smooth map to every nodal coordinate. Discretizations built
/// before must be rebuilt. Fails (restoring the mesh) if the deformed
/// geometry has a non-positive Jacobian anywhere.
pub fn deform(mesh: &mut MeshPartition, map: impl Fn([f64; 3]) -> [f64; 3]) -> Result<()> {
    let old: Vec<Vec<[f64; 3]>> = mesh.elements.iter().map(|e| e.coords.clone()).collect();
    for e in &mut mesh.elements {
        for p in &mut e.coords {
            *p = map(*p);
        }
    }
    let basis = ref_element::basis(mesh.order)?;
    for e in &mesh.elements {
        if let Err(err) = compute_geom_factors(e, &basis) {
            for (el, co) in mesh.elements.iter_mut().zip(old) {
                el.coords = co;
            }
            return Err(err);
        }
    }
    mesh.revision += 1;
    Ok(())
}
