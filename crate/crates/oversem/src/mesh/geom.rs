//! Isoparametric geometry factors.
//!
//! The local stiffness action factors as D_a^T (G_ab D_b u) with
//! G_ab = w |J| (grad r_a . grad r_b); only local_grad, a pointwise metric
//! multiply, and the transposed local_grad are needed.

use crate::error::{Error, Result};
use crate::ref_element::{local_grad, Dims, ElementBasis};

use super::Element;

#[derive(Debug, Clone)]
pub struct GeomFactors {
    pub dims: Dims,
    /// Jacobian determinant at each node (positive).
    pub jac: Vec<f64>,
    /// drdx[3a + c] = d r_a / d x_c at each node.
    pub drdx: [Vec<f64>; 9],
    /// Symmetric metric combined with quadrature: order rr, rs, rt, ss, st, tt.
    pub g: [Vec<f64>; 6],
    /// Diagonal mass entries w_i w_j w_k |J|.
    pub mass: Vec<f64>,
}

pub fn compute_geom_factors(elem: &Element, basis: &ElementBasis) -> Result<GeomFactors> {
    let n1 = basis.n1();
    assert_eq!(elem.order, basis.order(), "basis order must match element");
    let d = Dims::cube(n1);
    let len = d.len();
    // split coordinates into components
    let mut xc = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    for (idx, p) in elem.coords.iter().enumerate() {
        xc[0][idx] = p[0];
        xc[1][idx] = p[1];
        xc[2][idx] = p[2];
    }
    // dxdr[3c + a] = d x_c / d r_a
    let mut dxdr: Vec<Vec<f64>> = Vec::with_capacity(9);
    for comp in &xc {
        let (ur, us, ut, _) = local_grad(&basis.deriv.entries, comp, d)?;
        dxdr.push(ur);
        dxdr.push(us);
        dxdr.push(ut);
    }
    let w = &basis.rule.weights;
    let mut jac = vec![0.0; len];
    let mut drdx: [Vec<f64>; 9] = std::array::from_fn(|_| vec![0.0; len]);
    let mut g: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; len]);
    let mut mass = vec![0.0; len];
    for k in 0..n1 {
        for j in 0..n1 {
            for i in 0..n1 {
                let idx = d.idx(i, j, k);
                // J[c][a] = d x_c / d r_a
                let jm = [
                    [dxdr[0][idx], dxdr[1][idx], dxdr[2][idx]],
                    [dxdr[3][idx], dxdr[4][idx], dxdr[5][idx]],
                    [dxdr[6][idx], dxdr[7][idx], dxdr[8][idx]],
                ];
                let det = jm[0][0] * (jm[1][1] * jm[2][2] - jm[1][2] * jm[2][1])
                    - jm[0][1] * (jm[1][0] * jm[2][2] - jm[1][2] * jm[2][0])
                    + jm[0][2] * (jm[1][0] * jm[2][1] - jm[1][1] * jm[2][0]);
                if det <= 0.0 || !det.is_finite() {
                    return Err(Error::Geometry {
                        elem: elem.id,
                        msg: format!("non-positive Jacobian {det:.3e} at node {idx}"),
                    });
                }
                jac[idx] = det;
                // inverse: drdx[a][c] = d r_a / d x_c = adj(J)^T / det
                let inv = [
                    [
                        (jm[1][1] * jm[2][2] - jm[1][2] * jm[2][1]) / det,
                        (jm[0][2] * jm[2][1] - jm[0][1] * jm[2][2]) / det,
                        (jm[0][1] * jm[1][2] - jm[0][2] * jm[1][1]) / det,
                    ],
                    [
                        (jm[1][2] * jm[2][0] - jm[1][0] * jm[2][2]) / det,
                        (jm[0][0] * jm[2][2] - jm[0][2] * jm[2][0]) / det,
                        (jm[0][2] * jm[1][0] - jm[0][0] * jm[1][2]) / det,
                    ],
                    [
                        (jm[1][0] * jm[2][1] - jm[1][1] * jm[2][0]) / det,
                        (jm[0][1] * jm[2][0] - jm[0][0] * jm[2][1]) / det,
                        (jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0]) / det,
                    ],
                ];
                for a in 0..3 {
                    for c in 0..3 {
                        drdx[3 * a + c][idx] = inv[a][c];
                    }
                }
                let wq = w[i] * w[j] * w[k] * det;
                mass[idx] = wq;
                let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
                for (slot, &(a, b)) in pairs.iter().enumerate() {
                    let mut s = 0.0;
                    for c in 0..3 {
                        s += inv[a][c] * inv[b][c];
                    }
                    g[slot][idx] = wq * s;
                }
            }
        }
    }
    Ok(GeomFactors {
        dims: d,
        jac,
        drdx,
        g,
        mass,
    })
}

impl GeomFactors {
    /// Local stiffness action: out += coef * D^T (G (D u)).
    pub fn stiffness_apply(
        &self,
        basis: &ElementBasis,
        coef: f64,
        u: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let d = self.dims;
        let (ur, us, ut, _) = local_grad(&basis.deriv.entries, u, d)?;
        let len = d.len();
        let mut wr = vec![0.0; len];
        let mut ws = vec![0.0; len];
        let mut wt = vec![0.0; len];
        for idx in 0..len {
            let (grr, grs, grt) = (self.g[0][idx], self.g[1][idx], self.g[2][idx]);
            let (gss, gst, gtt) = (self.g[3][idx], self.g[4][idx], self.g[5][idx]);
            wr[idx] = coef * (grr * ur[idx] + grs * us[idx] + grt * ut[idx]);
            ws[idx] = coef * (grs * ur[idx] + gss * us[idx] + gst * ut[idx]);
            wt[idx] = coef * (grt * ur[idx] + gst * us[idx] + gtt * ut[idx]);
        }
        crate::flops::add_fp64(15 * len as u64);
        crate::ref_element::local_grad_transpose_add(&basis.deriv.entries, &wr, &ws, &wt, d, out)
    }

    /// Physical gradient of a nodal field via the chain rule.
    pub fn physical_grad(
        &self,
        basis: &ElementBasis,
        u: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let d = self.dims;
        let (ur, us, ut, _) = local_grad(&basis.deriv.entries, u, d)?;
        let len = d.len();
        let mut ux = vec![0.0; len];
        let mut uy = vec![0.0; len];
        let mut uz = vec![0.0; len];
        for idx in 0..len {
            for (c, out) in [&mut ux, &mut uy, &mut uz].into_iter().enumerate() {
                out[idx] = self.drdx[c][idx] * ur[idx]
                    + self.drdx[3 + c][idx] * us[idx]
                    + self.drdx[6 + c][idx] * ut[idx];
            }
        }
        crate::flops::add_fp64(15 * len as u64);
        Ok((ux, uy, uz))
    }
}
