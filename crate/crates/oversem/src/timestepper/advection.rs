//! Dealiased advection: velocities and gradients are interpolated to a
//! finer quadrature lattice of order N_q >= N, the nonlinear products are
//! formed there, and the result is projected back through the interpolation
//! transpose with quadrature weights. The per-element working set is
//! (N_q+1)^3 instead of (N+1)^3, which the instrumentation records.

use crate::error::{Error, Result};
use crate::la::Mat;
use crate::mesh::Discretization;
use crate::ref_element::{self, local_grad, tensor_apply, Axis, Dims};


/// Default dealiasing order: the 3/2 rule, ceil(3(N+1)/2) - 1.
/// Gives N_q = 11 for N = 7.
pub fn dealias_order(n: usize) -> usize {
    (3 * (n + 1)).div_ceil(2) - 1
}

pub struct AdvectionKernel {
    pub n: usize,
    pub nq: usize,
    interp: Mat,
    interp_t: Mat,
    deriv_q: Mat,
    /// d r_a / d x_c at the quadrature lattice, per element
    drdx_q: Vec<[Vec<f64>; 9]>,
    /// w |J| at the quadrature lattice, per element
    wj_q: Vec<Vec<f64>>,
    dims_n: Dims,
    dims_q: Dims,
    /// instrumentation: (N_q+1)^3 working set per element
    pub working_set_per_element: usize,
    /// the (N+1)^3 set most elemental operations touch, for comparison
    pub base_set_per_element: usize,
}

impl AdvectionKernel {
    pub fn build(disc: &Discretization, nq: usize) -> Result<Self> {
        let n = disc.order;
        if nq < n {
            return Err(Error::Config(format!(
                "dealiasing order N_q = {nq} must be at least N = {n}"
            )));
        }
        let interp = ref_element::interp(n, nq)?.entries.clone();
        let interp_t = interp.transpose();
        let basis_q = ref_element::basis(nq)?;
        let deriv_q = basis_q.deriv.entries.clone();
        let dims_n = Dims::cube(n + 1);
        let dims_q = Dims::cube(nq + 1);
        let wq = &basis_q.rule.weights;
        let mut drdx_q = Vec::with_capacity(disc.n_elements());
        let mut wj_q = Vec::with_capacity(disc.n_elements());
        for coords in &disc.coords {
            // geometry sampled exactly on the quadrature lattice
            let len = coords.len();
            let mut comp = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
            for (i, p) in coords.iter().enumerate() {
                comp[0][i] = p[0];
                comp[1][i] = p[1];
                comp[2][i] = p[2];
            }
            let mut dxdr: Vec<Vec<f64>> = Vec::with_capacity(9);
            for c in &comp {
                let (cq, _) = interp3(&interp, c, dims_n)?;
                let (xr, xs, xt, _) = local_grad(&deriv_q, &cq, dims_q)?;
                dxdr.push(xr);
                dxdr.push(xs);
                dxdr.push(xt);
            }
            let lenq = dims_q.len();
            let mut drdx: [Vec<f64>; 9] = std::array::from_fn(|_| vec![0.0; lenq]);
            let mut wj = vec![0.0; lenq];
            let n1q = nq + 1;
            for k in 0..n1q {
                for j in 0..n1q {
                    for i in 0..n1q {
                        let idx = dims_q.idx(i, j, k);
                        let jm = [
                            [dxdr[0][idx], dxdr[1][idx], dxdr[2][idx]],
                            [dxdr[3][idx], dxdr[4][idx], dxdr[5][idx]],
                            [dxdr[6][idx], dxdr[7][idx], dxdr[8][idx]],
                        ];
                        let det = jm[0][0] * (jm[1][1] * jm[2][2] - jm[1][2] * jm[2][1])
                            - jm[0][1] * (jm[1][0] * jm[2][2] - jm[1][2] * jm[2][0])
                            + jm[0][2] * (jm[1][0] * jm[2][1] - jm[1][1] * jm[2][0]);
                        if det <= 0.0 {
                            return Err(Error::Geometry {
                                elem: 0,
                                msg: format!("non-positive Jacobian {det:.3e} on N_q lattice"),
                            });
                        }
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
                        wj[idx] = wq[i] * wq[j] * wq[k] * det;
                    }
                }
            }
            drdx_q.push(drdx);
            wj_q.push(wj);
        }
        Ok(AdvectionKernel {
            n,
            nq,
            interp,
            interp_t,
            deriv_q,
            drdx_q,
            wj_q,
            dims_n,
            dims_q,
            working_set_per_element: (nq + 1).pow(3),
            base_set_per_element: (n + 1).pow(3),
        })
    }

    /// Weak form of (u . grad scalar): per element
    /// I^T [ w|J| * (u_q . grad_q scalar) ], unassembled (caller runs the
    /// gather-scatter or feeds it to a mass solve).
    pub fn weak_advect(&self, u: &[&[f64]; 3], scalar: &[f64]) -> Result<Vec<f64>> {
        let nodes_n = self.dims_n.len();
        let nodes_q = self.dims_q.len();
        let n_elem = self.drdx_q.len();
        let mut out = vec![0.0; n_elem * nodes_n];
        for e in 0..n_elem {
            let se = &scalar[e * nodes_n..(e + 1) * nodes_n];
            let (sq, _) = interp3(&self.interp, se, self.dims_n)?;
            let (sr, ss, st, _) = local_grad(&self.deriv_q, &sq, self.dims_q)?;
            let drdx = &self.drdx_q[e];
            let wj = &self.wj_q[e];
            let mut uq = [vec![0.0; nodes_q], vec![0.0; nodes_q], vec![0.0; nodes_q]];
            for c in 0..3 {
                let ue = &u[c][e * nodes_n..(e + 1) * nodes_n];
                let (v, _) = interp3(&self.interp, ue, self.dims_n)?;
                uq[c] = v;
            }
            let mut prod = vec![0.0; nodes_q];
            for idx in 0..nodes_q {
                let gx = drdx[0][idx] * sr[idx] + drdx[3][idx] * ss[idx] + drdx[6][idx] * st[idx];
                let gy = drdx[1][idx] * sr[idx] + drdx[4][idx] * ss[idx] + drdx[7][idx] * st[idx];
                let gz = drdx[2][idx] * sr[idx] + drdx[5][idx] * ss[idx] + drdx[8][idx] * st[idx];
                prod[idx] =
                    wj[idx] * (uq[0][idx] * gx + uq[1][idx] * gy + uq[2][idx] * gz);
            }
            crate::flops::add_fp64(22 * nodes_q as u64);
            let (a, da) = tensor_apply(&self.interp_t, Axis::R, &prod, self.dims_q)?;
            let (b, db) = tensor_apply(&self.interp_t, Axis::S, &a, da)?;
            let (cq, _) = tensor_apply(&self.interp_t, Axis::T, &b, db)?;
            out[e * nodes_n..(e + 1) * nodes_n].copy_from_slice(&cq);
        }
        Ok(out)
    }
}

fn interp3(m: &Mat, u: &[f64], d: Dims) -> Result<(Vec<f64>, Dims)> {
    ref_element::interp3(m, u, d)
}
