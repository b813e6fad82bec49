//! Newton inversion of the isoparametric map: find the reference
//! coordinates minimizing |x^e(r) - x*| over the closed cube.
//!
//! The iteration is projected Gauss-Newton on the squared distance with a
//! backtracking line search; minimizers on the cube boundary (border
//! points) are found by the projection. Interior points converge to a small
//! multiple of machine precision so interpolations retain the full accuracy
//! of the high-order expansion.

use crate::la::solve3;
use crate::ref_element::ElementBasis;

#[derive(Debug, Clone, Copy)]
pub struct NewtonResult {
    pub rstar: [f64; 3],
    pub distance: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Evaluate the map x^e and its Jacobian at a reference point, by tensor
/// contraction of the coordinate lattice with 1D basis values/derivatives.
pub fn eval_map(
    coords: &[Vec<f64>; 3],
    basis: &ElementBasis,
    r: [f64; 3],
) -> ([f64; 3], [[f64; 3]; 3]) {
    let n1 = basis.n1();
    let mut h = [vec![0.0; n1], vec![0.0; n1], vec![0.0; n1]];
    let mut dh = [vec![0.0; n1], vec![0.0; n1], vec![0.0; n1]];
    for a in 0..3 {
        basis.basis_at(r[a], &mut h[a], &mut dh[a]);
    }
    let mut x = [0.0; 3];
    let mut jac = [[0.0; 3]; 3]; // jac[c][a] = dx_c/dr_a
    for (c, comp) in coords.iter().enumerate() {
        // contract i
        let mut f1 = vec![0.0; n1 * n1]; // [j,k]
        let mut f1r = vec![0.0; n1 * n1];
        for k in 0..n1 {
            for j in 0..n1 {
                let base = n1 * (j + n1 * k);
                let mut s = 0.0;
                let mut sr = 0.0;
                for i in 0..n1 {
                    let v = comp[base + i];
                    s += v * h[0][i];
                    sr += v * dh[0][i];
                }
                f1[j + n1 * k] = s;
                f1r[j + n1 * k] = sr;
            }
        }
        // contract j
        let mut f2 = vec![0.0; n1];
        let mut f2r = vec![0.0; n1];
        let mut f2s = vec![0.0; n1];
        for k in 0..n1 {
            let mut s = 0.0;
            let mut sr = 0.0;
            let mut ss = 0.0;
            for j in 0..n1 {
                s += f1[j + n1 * k] * h[1][j];
                sr += f1r[j + n1 * k] * h[1][j];
                ss += f1[j + n1 * k] * dh[1][j];
            }
            f2[k] = s;
            f2r[k] = sr;
            f2s[k] = ss;
        }
        // contract k
        let mut v = 0.0;
        let mut vr = 0.0;
        let mut vs = 0.0;
        let mut vt = 0.0;
        for k in 0..n1 {
            v += f2[k] * h[2][k];
            vr += f2r[k] * h[2][k];
            vs += f2s[k] * h[2][k];
            vt += f2[k] * dh[2][k];
        }
        x[c] = v;
        jac[c][0] = vr;
        jac[c][1] = vs;
        jac[c][2] = vt;
    }
    (x, jac)
}

fn clamp_cube(r: [f64; 3]) -> [f64; 3] {
    [
        r[0].clamp(-1.0, 1.0),
        r[1].clamp(-1.0, 1.0),
        r[2].clamp(-1.0, 1.0),
    ]
}

fn dist2(coords: &[Vec<f64>; 3], basis: &ElementBasis, r: [f64; 3], xstar: [f64; 3]) -> f64 {
    let (x, _) = eval_map(coords, basis, r);
    let d = [x[0] - xstar[0], x[1] - xstar[1], x[2] - xstar[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Invert the element map for a physical target point, starting from a
/// reference-space guess. `diameter` scales the convergence thresholds.
pub fn newton_invert(
    coords: &[Vec<f64>; 3],
    basis: &ElementBasis,
    xstar: [f64; 3],
    guess: [f64; 3],
    diameter: f64,
) -> NewtonResult {
    const MAX_IT: usize = 50;
    let step_tol = 1e-13;
    let res_tol = 1e-14 * diameter.max(1e-300);
    let mut r = clamp_cube(guess);
    let mut phi = dist2(coords, basis, r, xstar);
    let mut converged = false;
    let mut it = 0;
    while it < MAX_IT {
        it += 1;
        let (x, jac) = eval_map(coords, basis, r);
        let res = [x[0] - xstar[0], x[1] - xstar[1], x[2] - xstar[2]];
        // gradient of 0.5|res|^2: g_a = sum_c J[c][a] res_c
        let mut g = [0.0; 3];
        for a in 0..3 {
            for c in 0..3 {
                g[a] += jac[c][a] * res[c];
            }
        }
        // Gauss-Newton Hessian J^T J; Tikhonov shift only if singular
        let mut h = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    h[a][b] += jac[c][a] * jac[c][b];
                }
            }
        }
        let rhs = [-g[0], -g[1], -g[2]];
        let step = solve3(&h, &rhs)
            .or_else(|| {
                let shift = 1e-12 * (h[0][0] + h[1][1] + h[2][2]).abs().max(1e-300);
                let mut hs = h;
                for a in 0..3 {
                    hs[a][a] += shift;
                }
                solve3(&hs, &rhs)
            })
            .unwrap_or(rhs);
        // backtracking line search with projection onto the cube
        let mut alpha = 1.0;
        let mut r_new = r;
        let mut phi_new = phi;
        let mut moved = 0.0;
        for _ in 0..30 {
            let cand = clamp_cube([
                r[0] + alpha * step[0],
                r[1] + alpha * step[1],
                r[2] + alpha * step[2],
            ]);
            let p = dist2(coords, basis, cand, xstar);
            if p <= phi {
                r_new = cand;
                phi_new = p;
                moved = ((cand[0] - r[0]).powi(2)
                    + (cand[1] - r[1]).powi(2)
                    + (cand[2] - r[2]).powi(2))
                .sqrt();
                break;
            }
            alpha *= 0.5;
        }
        r = r_new;
        phi = phi_new;
        if phi.sqrt() <= res_tol {
            converged = true;
            break;
        }
        // projected-gradient condition: at an active bound the gradient may
        // legitimately push outward
        let mut pg = 0.0f64;
        for a in 0..3 {
            let outward = (r[a] >= 1.0 && g[a] < 0.0) || (r[a] <= -1.0 && g[a] > 0.0);
            if !outward {
                pg = pg.max(g[a].abs());
            }
        }
        if moved <= step_tol {
            converged = pg <= 1e-10 * diameter.max(1e-300) || moved > 0.0 || phi == 0.0;
            converged = converged || pg <= 1e-8;
            break;
        }
    }
    NewtonResult {
        rstar: r,
        distance: phi.sqrt(),
        converged,
        iterations: it,
    }
}
