//! Mesh/field container: a little-endian binary documented in docs/FORMAT.md.
//!
//! Layout:
//!   magic "MSEM" | version u32 | E u64 | N u32 | P u32
//!   E element records: id u64, coords 3*(N+1)^3 f64 (x,y,z per node,
//!     lexicographic i-fastest), 7 tag bytes (6 face tags + region)
//!   zero or more field records: marker u8 = 1, name (len u32 + utf8),
//!     E*(N+1)^3 f64 values in element file order
//!   end marker u8 = 0

use crate::comm::{Comm, ReduceOp};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

use super::{BoxSpec, Element, FaceTag, MeshPartition, Region, FACE_COUNT};

pub const MAGIC: &[u8; 4] = b"MSEM";
pub const VERSION: u32 = 1;

struct ElementRecord {
    id: u64,
    coords: Vec<[f64; 3]>,
    tags: [u8; 7],
}

fn pack_local(mesh: &MeshPartition, fields: &[(&str, &[f64])]) -> Vec<u8> {
    let nodes_per = (mesh.order + 1).pow(3);
    let mut out = Vec::new();
    out.extend_from_slice(&(mesh.elements.len() as u64).to_le_bytes());
    for (e_idx, e) in mesh.elements.iter().enumerate() {
        out.extend_from_slice(&e.id.to_le_bytes());
        for p in &e.coords {
            for c in 0..3 {
                out.extend_from_slice(&p[c].to_le_bytes());
            }
        }
        for f in 0..FACE_COUNT {
            out.push(e.boundary[f].to_u8());
        }
        out.push(e.region.to_u8());
        for (_, vals) in fields {
            let base = e_idx * nodes_per;
            for v in &vals[base..base + nodes_per] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Write the whole mesh (and optional nodal fields) to one file.
/// Collective; rank 0 performs the write.
pub fn dump(
    mesh: &MeshPartition,
    fields: &[(&str, &[f64])],
    comm: &Comm,
    path: impl AsRef<Path>,
) -> Result<()> {
    let nodes_per = (mesh.order + 1).pow(3);
    for (name, vals) in fields {
        if vals.len() != mesh.elements.len() * nodes_per {
            return Err(Error::Shape(format!(
                "field '{name}' length {} != local slots {}",
                vals.len(),
                mesh.elements.len() * nodes_per
            )));
        }
    }
    let local = pack_local(mesh, fields);
    let gathered = comm.allgather_bytes(&local)?;
    if comm.rank() != 0 {
        return Ok(());
    }
    // unpack into id order
    let mut recs: Vec<(ElementRecord, Vec<Vec<f64>>)> = Vec::new();
    for bytes in &gathered {
        let mut off = 0usize;
        let count = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        off += 8;
        for _ in 0..count {
            let id = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
            let mut coords = Vec::with_capacity(nodes_per);
            for _ in 0..nodes_per {
                let mut p = [0.0; 3];
                for c in &mut p {
                    *c = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                    off += 8;
                }
                coords.push(p);
            }
            let mut tags = [0u8; 7];
            tags.copy_from_slice(&bytes[off..off + 7]);
            off += 7;
            let mut fvals: Vec<Vec<f64>> = Vec::with_capacity(fields.len());
            for _ in fields {
                let mut v = Vec::with_capacity(nodes_per);
                for _ in 0..nodes_per {
                    v.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
                    off += 8;
                }
                fvals.push(v);
            }
            recs.push((ElementRecord { id, coords, tags }, fvals));
        }
    }
    recs.sort_by_key(|(r, _)| r.id);

    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(recs.len() as u64).to_le_bytes())?;
    w.write_all(&(mesh.order as u32).to_le_bytes())?;
    w.write_all(&(comm.size() as u32).to_le_bytes())?;
    for (r, _) in &recs {
        w.write_all(&r.id.to_le_bytes())?;
        for p in &r.coords {
            for c in 0..3 {
                w.write_all(&p[c].to_le_bytes())?;
            }
        }
        w.write_all(&r.tags)?;
    }
    for (fi, (name, _)) in fields.iter().enumerate() {
        w.write_all(&[1u8])?;
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        for (_, fvals) in &recs {
            for v in &fvals[fi] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.write_all(&[0u8])?;
    w.flush()?;
    Ok(())
}

pub struct RestoredMesh {
    pub mesh: MeshPartition,
    pub fields: Vec<(String, Vec<f64>)>,
}

fn read_exact_vec(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Read a container and take this rank's contiguous share of the elements.
pub fn restore(path: impl AsRef<Path>, comm: &Comm) -> Result<RestoredMesh> {
    restore_for_rank(path, comm.size(), comm.rank())
}

pub fn restore_for_rank(path: impl AsRef<Path>, p: usize, rank: usize) -> Result<RestoredMesh> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact_vec(&mut r, 4)?;
    if magic != MAGIC {
        return Err(Error::Topology("bad magic (not an MSEM container)".into()));
    }
    let version = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Topology(format!("unsupported version {version}")));
    }
    let e_global = u64::from_le_bytes(read_exact_vec(&mut r, 8)?.try_into().unwrap());
    let order = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap()) as usize;
    let _p_written = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap());
    if (p as u64) > e_global {
        return Err(Error::Partition(format!(
            "cannot partition {e_global} elements across {p} ranks"
        )));
    }
    let nodes_per = (order + 1).pow(3);
    let (start, end) = super::partition_range(e_global, p, rank);
    let mut elements = Vec::with_capacity((end - start) as usize);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for eidx in 0..e_global {
        let id = u64::from_le_bytes(read_exact_vec(&mut r, 8)?.try_into().unwrap());
        let body = read_exact_vec(&mut r, nodes_per * 24 + 7)?;
        for pc in body[..nodes_per * 24].chunks_exact(8) {
            let v = f64::from_le_bytes(pc.try_into().unwrap());
            let _ = v;
        }
        if eidx >= start && eidx < end {
            let mut coords = Vec::with_capacity(nodes_per);
            for n in 0..nodes_per {
                let off = n * 24;
                let pnt = [
                    f64::from_le_bytes(body[off..off + 8].try_into().unwrap()),
                    f64::from_le_bytes(body[off + 8..off + 16].try_into().unwrap()),
                    f64::from_le_bytes(body[off + 16..off + 24].try_into().unwrap()),
                ];
                for c in 0..3 {
                    lo[c] = lo[c].min(pnt[c]);
                    hi[c] = hi[c].max(pnt[c]);
                }
                coords.push(pnt);
            }
            let t = &body[nodes_per * 24..];
            let mut boundary = [FaceTag::Interior; FACE_COUNT];
            for f in 0..FACE_COUNT {
                boundary[f] = FaceTag::from_u8(t[f])?;
            }
            let region = Region::from_u8(t[6])?;
            elements.push(Element {
                id,
                order,
                coords,
                boundary,
                region,
            });
        }
    }
    // field records
    let mut fields = Vec::new();
    loop {
        let mut marker = [0u8; 1];
        if r.read_exact(&mut marker).is_err() || marker[0] == 0 {
            break;
        }
        let name_len = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(read_exact_vec(&mut r, name_len)?)
            .map_err(|_| Error::Topology("bad field name encoding".into()))?;
        let mut vals = Vec::with_capacity(((end - start) as usize) * nodes_per);
        for eidx in 0..e_global {
            let body = read_exact_vec(&mut r, nodes_per * 8)?;
            if eidx >= start && eidx < end {
                for c in body.chunks_exact(8) {
                    vals.push(f64::from_le_bytes(c.try_into().unwrap()));
                }
            }
        }
        fields.push((name, vals));
    }
    let domain = if elements.is_empty() {
        BoxSpec::unit()
    } else {
        BoxSpec::new(lo, hi)
    };
    Ok(RestoredMesh {
        mesh: MeshPartition {
            order,
            extents: (0, 0, 0),
            domain,
            e_global,
            n_ranks: p,
            rank,
            elements,
            revision: 0,
        },
        fields,
    })
}

/// Header summary for the `mesh-info` CLI subcommand.
pub struct MeshInfo {
    pub e_global: u64,
    pub order: usize,
    pub p_written: usize,
    pub gridpoints: u64,
    pub bbox: ([f64; 3], [f64; 3]),
    pub field_names: Vec<String>,
}

pub fn mesh_info(path: impl AsRef<Path>) -> Result<MeshInfo> {
    let restored = restore_for_rank(&path, 1, 0)?;
    // reread header for p_written
    let mut r = std::io::BufReader::new(std::fs::File::open(&path)?);
    let _ = read_exact_vec(&mut r, 4 + 4 + 8 + 4)?;
    let p_written = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap()) as usize;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for e in &restored.mesh.elements {
        let (elo, ehi) = e.bbox();
        for c in 0..3 {
            lo[c] = lo[c].min(elo[c]);
            hi[c] = hi[c].max(ehi[c]);
        }
    }
    Ok(MeshInfo {
        e_global: restored.mesh.e_global,
        order: restored.mesh.order,
        p_written,
        gridpoints: restored.mesh.gridpoints(),
        bbox: (lo, hi),
        field_names: restored.fields.iter().map(|(n, _)| n.clone()).collect(),
    })
}

/// Consistency checksum used by tests: collective sum over unique dofs.
pub fn field_checksum(field: &[f64], gs: &super::GatherScatter, comm: &Comm) -> Result<f64> {
    let mut local = 0.0;
    for (v, &im) in field.iter().zip(gs.inv_multiplicity()) {
        local += v * im;
    }
    comm.allreduce_scalar(local, ReduceOp::Sum)
}
