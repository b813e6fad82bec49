//! C0 gather-scatter (QQ^T): every local copy of a shared dof ends up
//! holding the reduction over all copies.
//!
//! Exchange plans are derived from the numbering: each shared gid has a
//! designated owner (lowest sharing rank); non-owners send local partials
//! to the owner, the owner folds them in ascending rank order (so results
//! are reproducible and partition-invariant to roundoff), and finals travel
//! back. All transport goes through the crystal router. Two packing
//! strategies are kept — one packed message per peer, or one message per
//! dof — selectable by the autotuner.

use crate::comm::{Comm, ReduceOp, RoutedMessage};
use crate::error::{Error, Result};
use crate::tuning;
use std::collections::HashMap;

use super::Numbering;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsOp {
    Sum,
    Min,
    Max,
}

#[derive(Debug)]
struct GuestGroup {
    gid: u64,
    owner: usize,
    slots: Vec<u32>,
}

#[derive(Debug)]
struct OwnGroup {
    gid: u64,
    slots: Vec<u32>,
    /// all sharer ranks ascending (including me)
    sharers: Vec<usize>,
}

#[derive(Debug)]
pub struct GatherScatter {
    n_slots: usize,
    inv_mult: Vec<f64>,
    /// purely rank-local shared dofs: slot groups
    local_groups: Vec<Vec<u32>>,
    guest: Vec<GuestGroup>,
    own: Vec<OwnGroup>,
    /// for each source rank: indices into `own` (gid order) it contributes to
    own_sources: Vec<(usize, Vec<u32>)>,
    guest_by_gid: HashMap<u64, u32>,
    own_by_gid: HashMap<u64, u32>,
}

const TAG_GS_A: u64 = 1;
const TAG_GS_B: u64 = 2;

impl GatherScatter {
    /// Build exchange plans (collective). Validates that all ranks derived
    /// the same numbering via a checksum.
    pub fn setup(numbering: &Numbering, comm: &Comm) -> Result<GatherScatter> {
        let lo = comm.allreduce_scalar(numbering.checksum as f64, ReduceOp::Min)?;
        let hi = comm.allreduce_scalar(numbering.checksum as f64, ReduceOp::Max)?;
        if lo != hi {
            return Err(Error::Topology(
                "numbering checksum mismatch across ranks".into(),
            ));
        }
        let me = comm.rank();
        let nodes_per = (numbering.order + 1).pow(3);
        let n_slots = numbering.gids.len() * nodes_per;
        // collect local slots per gid
        let mut slots_of: HashMap<u64, Vec<u32>> = HashMap::new();
        for (e, egids) in numbering.gids.iter().enumerate() {
            for (n, &gid) in egids.iter().enumerate() {
                slots_of
                    .entry(gid)
                    .or_default()
                    .push((e * nodes_per + n) as u32);
            }
        }
        let mut local_groups = Vec::new();
        let mut guest = Vec::new();
        let mut own = Vec::new();
        let mut gids_sorted: Vec<u64> = slots_of.keys().copied().collect();
        gids_sorted.sort_unstable();
        for gid in gids_sorted {
            let slots = slots_of.remove(&gid).unwrap();
            match numbering.sharers.get(&gid) {
                Some(sharers) => {
                    let owner = sharers[0];
                    if owner == me {
                        own.push(OwnGroup {
                            gid,
                            slots,
                            sharers: sharers.clone(),
                        });
                    } else {
                        guest.push(GuestGroup {
                            gid,
                            owner,
                            slots,
                        });
                    }
                }
                None => {
                    if slots.len() > 1 {
                        local_groups.push(slots);
                    }
                }
            }
        }
        guest.sort_by_key(|g| (g.owner, g.gid));
        // own is already gid-sorted
        let mut own_sources: Vec<(usize, Vec<u32>)> = Vec::new();
        {
            let mut per_source: HashMap<usize, Vec<u32>> = HashMap::new();
            for (i, og) in own.iter().enumerate() {
                for &s in &og.sharers {
                    if s != me {
                        per_source.entry(s).or_default().push(i as u32);
                    }
                }
            }
            let mut sources: Vec<usize> = per_source.keys().copied().collect();
            sources.sort_unstable();
            for s in sources {
                own_sources.push((s, per_source.remove(&s).unwrap()));
            }
        }
        let guest_by_gid = guest
            .iter()
            .enumerate()
            .map(|(i, g)| (g.gid, i as u32))
            .collect();
        let own_by_gid = own
            .iter()
            .enumerate()
            .map(|(i, g)| (g.gid, i as u32))
            .collect();
        let inv_mult = numbering
            .multiplicity
            .iter()
            .map(|&m| 1.0 / m as f64)
            .collect();
        Ok(GatherScatter {
            n_slots,
            inv_mult,
            local_groups,
            guest,
            own,
            own_sources,
            guest_by_gid,
            own_by_gid,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn inv_multiplicity(&self) -> &[f64] {
        &self.inv_mult
    }

    fn fold(op: GsOp, acc: f64, v: f64) -> f64 {
        match op {
            GsOp::Sum => acc + v,
            GsOp::Min => acc.min(v),
            GsOp::Max => acc.max(v),
        }
    }

    /// Reduce every copy of each shared dof over all its copies; local
    /// copies of the result are written back in place. Collective.
    pub fn exchange(&self, field: &mut [f64], op: GsOp, comm: &Comm) -> Result<()> {
        if field.len() != self.n_slots {
            return Err(Error::Shape(format!(
                "gather_scatter: field length {} vs {} slots",
                field.len(),
                self.n_slots
            )));
        }
        // purely local groups
        for grp in &self.local_groups {
            let mut acc = field[grp[0] as usize];
            for &s in &grp[1..] {
                acc = Self::fold(op, acc, field[s as usize]);
            }
            for &s in grp {
                field[s as usize] = acc;
            }
        }
        if comm.size() == 1 || (self.guest.is_empty() && self.own.is_empty()) {
            // still must participate in the collective if others exchange
            if comm.size() > 1 {
                self.exchange_remote(field, op, comm)?;
            }
            return Ok(());
        }
        self.exchange_remote(field, op, comm)
    }

    fn exchange_remote(&self, field: &mut [f64], op: GsOp, comm: &Comm) -> Result<()> {
        let me = comm.rank();
        // local partials
        let guest_partial: Vec<f64> = self
            .guest
            .iter()
            .map(|g| {
                let mut acc = field[g.slots[0] as usize];
                for &s in &g.slots[1..] {
                    acc = Self::fold(op, acc, field[s as usize]);
                }
                acc
            })
            .collect();
        let own_partial: Vec<f64> = self
            .own
            .iter()
            .map(|g| {
                let mut acc = field[g.slots[0] as usize];
                for &s in &g.slots[1..] {
                    acc = Self::fold(op, acc, field[s as usize]);
                }
                acc
            })
            .collect();

        let permessage = tuning::gs_variant() == tuning::GS_PERMESSAGE;
        // phase A: guests -> owners
        let mut outbox: Vec<RoutedMessage> = Vec::new();
        if permessage {
            for (g, &v) in self.guest.iter().zip(&guest_partial) {
                let mut payload = Vec::with_capacity(8);
                payload.extend_from_slice(&v.to_le_bytes());
                outbox.push(RoutedMessage::new(g.owner, me, g.gid << 2 | TAG_GS_A, payload));
            }
        } else {
            let mut i = 0;
            while i < self.guest.len() {
                let owner = self.guest[i].owner;
                let mut payload = Vec::new();
                while i < self.guest.len() && self.guest[i].owner == owner {
                    payload.extend_from_slice(&guest_partial[i].to_le_bytes());
                    i += 1;
                }
                outbox.push(RoutedMessage::new(owner, me, TAG_GS_A, payload));
            }
        }
        let (inbox, _) = comm.crystal_route(outbox)?;

        // owner reduce: fold partials in ascending sharer-rank order
        let mut source_vals: HashMap<(usize, u32), f64> = HashMap::new();
        if permessage {
            for m in &inbox {
                let gid = m.tag >> 2;
                let idx = *self.own_by_gid.get(&gid).ok_or_else(|| {
                    Error::Topology(format!("unexpected gs message for gid {gid}"))
                })?;
                let v = f64::from_le_bytes(m.payload[0..8].try_into().unwrap());
                source_vals.insert((m.source_rank, idx), v);
            }
        } else {
            for m in &inbox {
                let src = m.source_rank;
                let idxs = self
                    .own_sources
                    .iter()
                    .find(|(s, _)| *s == src)
                    .map(|(_, v)| v)
                    .ok_or_else(|| {
                        Error::Topology(format!("unexpected gs message from rank {src}"))
                    })?;
                if m.payload.len() != idxs.len() * 8 {
                    return Err(Error::Topology("gs payload length mismatch".into()));
                }
                for (k, &idx) in idxs.iter().enumerate() {
                    let v = f64::from_le_bytes(m.payload[k * 8..k * 8 + 8].try_into().unwrap());
                    source_vals.insert((src, idx), v);
                }
            }
        }
        let mut finals = vec![0.0; self.own.len()];
        for (i, og) in self.own.iter().enumerate() {
            let mut acc: Option<f64> = None;
            for &s in &og.sharers {
                let v = if s == me {
                    own_partial[i]
                } else {
                    *source_vals.get(&(s, i as u32)).ok_or_else(|| {
                        Error::Topology(format!("missing gs partial from rank {s}"))
                    })?
                };
                acc = Some(match acc {
                    None => v,
                    Some(a) => Self::fold(op, a, v),
                });
            }
            finals[i] = acc.unwrap();
            for &slot in &og.slots {
                field[slot as usize] = finals[i];
            }
        }

        // phase B: owners -> guests
        let mut outbox: Vec<RoutedMessage> = Vec::new();
        if permessage {
            for (i, og) in self.own.iter().enumerate() {
                for &s in &og.sharers {
                    if s != me {
                        let mut payload = Vec::with_capacity(8);
                        payload.extend_from_slice(&finals[i].to_le_bytes());
                        outbox.push(RoutedMessage::new(s, me, og.gid << 2 | TAG_GS_B, payload));
                    }
                }
            }
        } else {
            for (s, idxs) in &self.own_sources {
                let mut payload = Vec::with_capacity(idxs.len() * 8);
                for &idx in idxs {
                    payload.extend_from_slice(&finals[idx as usize].to_le_bytes());
                }
                outbox.push(RoutedMessage::new(*s, me, TAG_GS_B, payload));
            }
        }
        let (inbox, _) = comm.crystal_route(outbox)?;
        if permessage {
            for m in &inbox {
                let gid = m.tag >> 2;
                let idx = *self.guest_by_gid.get(&gid).ok_or_else(|| {
                    Error::Topology(format!("unexpected gs final for gid {gid}"))
                })? as usize;
                let v = f64::from_le_bytes(m.payload[0..8].try_into().unwrap());
                for &slot in &self.guest[idx].slots {
                    field[slot as usize] = v;
                }
            }
        } else {
            for m in &inbox {
                let owner = m.source_rank;
                // my guest groups for this owner, in gid order
                let idxs: Vec<usize> = self
                    .guest
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.owner == owner)
                    .map(|(i, _)| i)
                    .collect();
                if m.payload.len() != idxs.len() * 8 {
                    return Err(Error::Topology("gs reply length mismatch".into()));
                }
                for (k, &i) in idxs.iter().enumerate() {
                    let v = f64::from_le_bytes(m.payload[k * 8..k * 8 + 8].try_into().unwrap());
                    for &slot in &self.guest[i].slots {
                        field[slot as usize] = v;
                    }
                }
            }
        }
        Ok(())
    }

    /// Assembled inner product: sum of u*v weighted by 1/multiplicity so
    /// shared dofs count once, reduced over all ranks in fixed order.
    pub fn dot(&self, u: &[f64], v: &[f64], comm: &Comm) -> Result<f64> {
        let mut local = 0.0;
        for i in 0..u.len() {
            local += u[i] * v[i] * self.inv_mult[i];
        }
        crate::flops::add_fp64(3 * u.len() as u64);
        comm.allreduce_scalar(local, ReduceOp::Sum)
    }

    /// Weighted sum of a single field (integral-style accumulations).
    pub fn weighted_sum(&self, u: &[f64], comm: &Comm) -> Result<f64> {
        let mut local = 0.0;
        for i in 0..u.len() {
            local += u[i] * self.inv_mult[i];
        }
        comm.allreduce_scalar(local, ReduceOp::Sum)
    }
}
