//! Tensor-contraction kernels on (nr x ns x nt) element lattices.
//!
//! Element arrays are stored lexicographically with the r index fastest:
//! u[i + nr*(j + ns*k)]. Every operator in the code is built from these
//! single-axis contractions, which cost O(m * nr*ns*nt) each — O(N^4) per
//! element when m ~ N.

use crate::flops;
use crate::la::MatG;
use crate::scalar::Real;
use crate::tuning;

/// Extents of an element lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub nr: usize,
    pub ns: usize,
    pub nt: usize,
}

impl Dims {
    pub fn cube(n: usize) -> Self {
        Self {
            nr: n,
            ns: n,
            nt: n,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nr * self.ns * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nr * (j + self.ns * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    R,
    S,
    T,
}

/// Contract `a` (m x n) along one axis of `u`; the contracted extent must
/// equal n. Returns the new array and its dims. Multiply-add count is
/// tallied in the per-rank FLOP counter (2 flops per madd).
pub fn tensor_apply<T: Real>(
    a: &MatG<T>,
    axis: Axis,
    u: &[T],
    d: Dims,
) -> crate::Result<(Vec<T>, Dims)> {
    let (m, n) = (a.rows, a.cols);
    let expect = match axis {
        Axis::R => d.nr,
        Axis::S => d.ns,
        Axis::T => d.nt,
    };
    if n != expect || u.len() != d.len() {
        return Err(crate::Error::Shape(format!(
            "tensor_apply: matrix {}x{} against axis extent {} (array len {} vs dims {:?})",
            m,
            n,
            expect,
            u.len(),
            d
        )));
    }
    let out_d = match axis {
        Axis::R => Dims { nr: m, ..d },
        Axis::S => Dims { ns: m, ..d },
        Axis::T => Dims { nt: m, ..d },
    };
    let mut out = vec![T::ZERO; out_d.len()];
    apply_into(a, axis, u, d, &mut out, out_d);
    let madds = (m * n * d.len() / expect) as u64;
    if std::mem::size_of::<T>() == 4 {
        flops::add_fp32(2 * madds);
    } else {
        flops::add_fp64(2 * madds);
    }
    Ok((out, out_d))
}

fn apply_into<T: Real>(a: &MatG<T>, axis: Axis, u: &[T], d: Dims, out: &mut [T], out_d: Dims) {
    let (m, n) = (a.rows, a.cols);
    match axis {
        Axis::R => {
            // out[p,j,k] = sum_i a[p,i] u[i,j,k]
            for k in 0..d.nt {
                for j in 0..d.ns {
                    let base = d.idx(0, j, k);
                    let ob = out_d.idx(0, j, k);
                    for p in 0..m {
                        let row = a.row(p);
                        let mut s = T::ZERO;
                        for i in 0..n {
                            s += row[i] * u[base + i];
                        }
                        out[ob + p] = s;
                    }
                }
            }
        }
        Axis::S => {
            // out[i,p,k] = sum_j a[p,j] u[i,j,k]
            for k in 0..d.nt {
                for p in 0..m {
                    let row = a.row(p);
                    let ob = out_d.idx(0, p, k);
                    for j in 0..n {
                        let apj = row[j];
                        let base = d.idx(0, j, k);
                        for i in 0..d.nr {
                            out[ob + i] += apj * u[base + i];
                        }
                    }
                }
            }
        }
        Axis::T => {
            // out[i,j,p] = sum_k a[p,k] u[i,j,k]
            let plane = d.nr * d.ns;
            for p in 0..m {
                let row = a.row(p);
                let ob = out_d.idx(0, 0, p);
                for k in 0..n {
                    let apk = row[k];
                    let base = d.idx(0, 0, k);
                    for q in 0..plane {
                        out[ob + q] += apk * u[base + q];
                    }
                }
            }
        }
    }
}

/// Reference-space gradient of a lattice field: one contraction per axis.
///
/// Returns (u_r, u_s, u_t) and the multiply-add count, which is exactly
/// 3 * (N+1)^4 for a cubic lattice against an (N+1)x(N+1) matrix.
pub fn local_grad<T: Real>(
    deriv: &MatG<T>,
    u: &[T],
    d: Dims,
) -> crate::Result<(Vec<T>, Vec<T>, Vec<T>, u64)> {
    match tuning::local_grad_variant() {
        tuning::LOCAL_GRAD_SLICED => local_grad_sliced(deriv, u, d),
        _ => local_grad_naive(deriv, u, d),
    }
}

/// Plain variant: three independent tensor_apply passes.
pub fn local_grad_naive<T: Real>(
    deriv: &MatG<T>,
    u: &[T],
    d: Dims,
) -> crate::Result<(Vec<T>, Vec<T>, Vec<T>, u64)> {
    let (ur, _) = tensor_apply(deriv, Axis::R, u, d)?;
    let (us, _) = tensor_apply(deriv, Axis::S, u, d)?;
    let (ut, _) = tensor_apply(deriv, Axis::T, u, d)?;
    let n = deriv.cols;
    let madds = (3 * deriv.rows * n * (d.len() / match_axis_len(d, n))) as u64;
    Ok((ur, us, ut, madds))
}

fn match_axis_len(d: Dims, n: usize) -> usize {
    // all three axes share the extent for local_grad
    debug_assert!(d.nr == n && d.ns == n && d.nt == n);
    n
}

/// Slice-walking variant with the same accumulation order as the naive one
/// (bitwise-identical results), but structured so the compiler sees
/// contiguous windows. Registered with the autotuner as an alternative.
pub fn local_grad_sliced<T: Real>(
    deriv: &MatG<T>,
    u: &[T],
    d: Dims,
) -> crate::Result<(Vec<T>, Vec<T>, Vec<T>, u64)> {
    let n = deriv.cols;
    if deriv.rows != n || d.nr != n || d.ns != n || d.nt != n {
        return local_grad_naive(deriv, u, d);
    }
    let len = d.len();
    let mut ur = vec![T::ZERO; len];
    let mut us = vec![T::ZERO; len];
    let mut ut = vec![T::ZERO; len];
    let plane = n * n;
    // r-derivative: dense row dot per pencil
    for jk in 0..plane {
        let pencil = &u[jk * n..(jk + 1) * n];
        let out = &mut ur[jk * n..(jk + 1) * n];
        for (p, op) in out.iter_mut().enumerate() {
            let row = deriv.row(p);
            let mut s = T::ZERO;
            for i in 0..n {
                s += row[i] * pencil[i];
            }
            *op = s;
        }
    }
    // s-derivative
    for k in 0..n {
        for p in 0..n {
            let row = deriv.row(p);
            let ob = d.idx(0, p, k);
            for j in 0..n {
                let apj = row[j];
                let src = &u[d.idx(0, j, k)..d.idx(0, j, k) + n];
                let dst = &mut us[ob..ob + n];
                for (di, si) in dst.iter_mut().zip(src) {
                    *di += apj * *si;
                }
            }
        }
    }
    // t-derivative
    for p in 0..n {
        let row = deriv.row(p);
        let ob = d.idx(0, 0, p);
        for k in 0..n {
            let apk = row[k];
            let src = &u[d.idx(0, 0, k)..d.idx(0, 0, k) + plane];
            let dst = &mut ut[ob..ob + plane];
            for (di, si) in dst.iter_mut().zip(src) {
                *di += apk * *si;
            }
        }
    }
    let madds = (3 * n * n * plane) as u64;
    if std::mem::size_of::<T>() == 4 {
        flops::add_fp32(2 * madds);
    } else {
        flops::add_fp64(2 * madds);
    }
    Ok((ur, us, ut, madds))
}

/// Apply the transpose contraction D^T along each axis and accumulate:
/// out += D_r^T wr + D_s^T ws + D_t^T wt. This is the adjoint of local_grad
/// and closes the standard SEM stiffness factorization.
pub fn local_grad_transpose_add<T: Real>(
    deriv: &MatG<T>,
    wr: &[T],
    ws: &[T],
    wt: &[T],
    d: Dims,
    out: &mut [T],
) -> crate::Result<()> {
    let dt = deriv.transpose();
    let (a, _) = tensor_apply(&dt, Axis::R, wr, d)?;
    let (b, _) = tensor_apply(&dt, Axis::S, ws, d)?;
    let (c, _) = tensor_apply(&dt, Axis::T, wt, d)?;
    for i in 0..out.len() {
        out[i] += a[i] + b[i] + c[i];
    }
    Ok(())
}

/// Interpolate a lattice field to a different order in all three directions
/// with the same 1D matrix.
pub fn interp3<T: Real>(interp: &MatG<T>, u: &[T], d: Dims) -> crate::Result<(Vec<T>, Dims)> {
    let (order, alt) = match tuning::adv_interp_variant() {
        tuning::ADV_INTERP_TSR => ([Axis::T, Axis::S, Axis::R], true),
        _ => ([Axis::R, Axis::S, Axis::T], false),
    };
    let _ = alt;
    let (v, dv) = tensor_apply(interp, order[0], u, d)?;
    let (v, dv) = tensor_apply(interp, order[1], &v, dv)?;
    tensor_apply(interp, order[2], &v, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::la::Mat;

    fn lattice(n: usize, f: impl Fn(usize, usize, usize) -> f64) -> (Vec<f64>, Dims) {
        let d = Dims::cube(n);
        let mut u = vec![0.0; d.len()];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    u[d.idx(i, j, k)] = f(i, j, k);
                }
            }
        }
        (u, d)
    }

    /// Naive O(n^6)-style dense oracle: contract along one axis with
    /// explicit triple loops over the full lattice.
    fn dense_oracle(a: &Mat, axis: Axis, u: &[f64], d: Dims) -> Vec<f64> {
        let m = a.rows;
        let od = match axis {
            Axis::R => Dims { nr: m, ..d },
            Axis::S => Dims { ns: m, ..d },
            Axis::T => Dims { nt: m, ..d },
        };
        let mut out = vec![0.0; od.len()];
        for k in 0..od.nt {
            for j in 0..od.ns {
                for i in 0..od.nr {
                    let mut s = 0.0;
                    match axis {
                        Axis::R => {
                            for q in 0..d.nr {
                                s += a.at(i, q) * u[d.idx(q, j, k)];
                            }
                        }
                        Axis::S => {
                            for q in 0..d.ns {
                                s += a.at(j, q) * u[d.idx(i, q, k)];
                            }
                        }
                        Axis::T => {
                            for q in 0..d.nt {
                                s += a.at(k, q) * u[d.idx(i, j, q)];
                            }
                        }
                    }
                    out[od.idx(i, j, k)] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_leaves_field() {
        let (u, d) = lattice(4, |i, j, k| (i * 17 + j * 5 + k) as f64);
        let eye = Mat::identity(4);
        for axis in [Axis::R, Axis::S, Axis::T] {
            let (v, dv) = tensor_apply(&eye, axis, &u, d).unwrap();
            assert_eq!(dv, d);
            assert_eq!(v, u);
        }
    }

    #[test]
    fn matches_dense_oracle_random() {
        // pseudo-random but deterministic entries
        let n = 4; // N=3
        let mut seed = 12345u64;
        let mut rng = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        let a = Mat::from_rows(5, n, (0..5 * n).map(|_| rng()).collect());
        let (u, d) = {
            let d = Dims::cube(n);
            let u: Vec<f64> = (0..d.len()).map(|_| rng()).collect();
            (u, d)
        };
        for axis in [Axis::R, Axis::S, Axis::T] {
            let (v, _) = tensor_apply(&a, axis, &u, d).unwrap();
            let w = dense_oracle(&a, axis, &u, d);
            for (x, y) in v.iter().zip(&w) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Mat::identity(3);
        let (u, d) = lattice(4, |_, _, _| 1.0);
        assert!(tensor_apply(&a, Axis::R, &u, d).is_err());
    }

    #[test]
    fn sliced_variant_bitwise_equal() {
        let n = 6;
        let mut seed = 999u64;
        let mut rng = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64) / (u32::MAX as f64) - 0.5
        };
        let a = Mat::from_rows(n, n, (0..n * n).map(|_| rng()).collect());
        let d = Dims::cube(n);
        let u: Vec<f64> = (0..d.len()).map(|_| rng()).collect();
        let (r1, s1, t1, _) = local_grad_naive(&a, &u, d).unwrap();
        let (r2, s2, t2, _) = local_grad_sliced(&a, &u, d).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn local_grad_work_is_3n4() {
        for np in [5usize, 9] {
            let a = Mat::identity(np);
            let d = Dims::cube(np);
            let u = vec![1.0; d.len()];
            let (_, _, _, madds) = local_grad_naive(&a, &u, d).unwrap();
            assert_eq!(madds as usize, 3 * np * np * np * np);
        }
    }
}
