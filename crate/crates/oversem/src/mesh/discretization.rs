//! A mesh partition discretized at one polynomial order: basis, geometry
//! factors, numbering, and gather-scatter, bundled for operator use.
//! p-multigrid builds one of these per level.

use crate::comm::Comm;
use crate::error::Result;
use crate::ref_element::{self, Dims, ElementBasis};
use std::sync::Arc;

use super::numbering::coords_at_order;
use super::{build_numbering, GatherScatter, GeomFactors, MeshPartition, Numbering};

pub struct Discretization {
    pub order: usize,
    pub basis: Arc<ElementBasis>,
    /// Per-element nodal coordinates at this order.
    pub coords: Vec<Vec<[f64; 3]>>,
    pub geom: Vec<GeomFactors>,
    pub numbering: Numbering,
    pub gs: GatherScatter,
    pub dims: Dims,
    pub nodes_per_element: usize,
}

impl Discretization {
    /// Collective build at the requested order (== mesh order for the fine
    /// level, lower for pMG levels).
    pub fn build(mesh: &MeshPartition, comm: &Comm, order: usize) -> Result<Self> {
        let basis = ref_element::basis(order)?;
        let coords = coords_at_order(mesh, order)?;
        let numbering = build_numbering(mesh, comm, order)?;
        let gs = GatherScatter::setup(&numbering, comm)?;
        let mut geom = Vec::with_capacity(mesh.elements.len());
        for (e, pts) in mesh.elements.iter().zip(&coords) {
            // geometry at this order comes from the order-sampled coords
            let tmp = super::Element {
                id: e.id,
                order,
                coords: pts.clone(),
                boundary: e.boundary,
                region: e.region,
            };
            geom.push(super::compute_geom_factors(&tmp, &basis)?);
        }
        let dims = Dims::cube(order + 1);
        Ok(Self {
            order,
            basis,
            coords,
            geom,
            numbering,
            gs,
            dims,
            nodes_per_element: dims.len(),
        })
    }

    pub fn n_elements(&self) -> usize {
        self.geom.len()
    }

    pub fn n_slots(&self) -> usize {
        self.n_elements() * self.nodes_per_element
    }

    /// Physical coordinates of a local slot.
    pub fn slot_coords(&self, slot: usize) -> [f64; 3] {
        let e = slot / self.nodes_per_element;
        let n = slot % self.nodes_per_element;
        self.coords[e][n]
    }

    /// Total assembled mass (volume when the field is 1). Collective.
    pub fn total_mass(&self, comm: &Comm) -> Result<f64> {
        let local: f64 = self.geom.iter().map(|g| g.mass.iter().sum::<f64>()).sum();
        comm.allreduce_scalar(local, crate::comm::ReduceOp::Sum)
    }
}
