//! Gauss-Lobatto-Legendre nodes and weights.
//!
//! The N+1 GLL nodes are the roots of (1-x^2) L_N'(x), including the
//! endpoints. Interior roots are found by Newton iteration started from
//! Chebyshev-Lobatto points, with a bisection fallback if an iterate ever
//! leaves its bracket.

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 15;

/// Legendre polynomial L_n and its derivative at x, by the three-term
/// recurrence.
pub fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    // L_n'(x) = n (x L_n - L_{n-1}) / (x^2 - 1), regular form at |x| < 1
    let dp = if (x * x - 1.0).abs() > 1e-30 {
        n as f64 * (x * p - p_prev) / (x * x - 1.0)
    } else {
        // endpoint value: L_n'(+-1) = (+-1)^{n-1} n(n+1)/2
        let sign = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        sign * n as f64 * (n as f64 + 1.0) / 2.0
    };
    (p, dp)
}

/// Residual function whose interior roots are the GLL nodes.
fn gll_residual(n: usize, x: f64) -> f64 {
    let (_, dp) = legendre_and_deriv(n, x);
    (1.0 - x * x) * dp
}

/// Compute the N+1 GLL nodes for order n in ascending order.
///
/// Interior nodes are converged so that |(1-x^2) L_n'(x)| <= 1e-14.
/// Symmetry about zero is enforced exactly by mirroring the lower half.
pub fn gll_nodes(n: usize) -> Result<Vec<f64>> {
    if n < 1 || n > MAX_ORDER {
        return Err(Error::InvalidOrder(n));
    }
    let mut nodes = vec![0.0; n + 1];
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    if n == 1 {
        return Ok(nodes);
    }
    // Chebyshev-Lobatto initial guesses for the interior nodes.
    let guess = |j: usize| -(std::f64::consts::PI * j as f64 / n as f64).cos();
    // Solve only the lower half; mirror for exact symmetry.
    for j in 1..n {
        if j >= n - j {
            break;
        }
        // Bracket from midpoints of adjacent guesses.
        let lo = 0.5 * (guess(j) + guess(j - 1));
        let hi = 0.5 * (guess(j) + guess(j + 1));
        let x = newton_bisect(n, guess(j), lo, hi);
        nodes[j] = x;
        nodes[n - j] = -x;
    }
    if n % 2 == 0 {
        nodes[n / 2] = 0.0;
    }
    Ok(nodes)
}

/// Newton on f(x) = (1-x^2) L_n'(x) using the identity f'(x) = -n(n+1) L_n(x),
/// falling back to bisection whenever the iterate leaves [lo, hi].
fn newton_bisect(n: usize, x0: f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut x = x0;
    let flo = gll_residual(n, lo);
    // keep the bracket sign convention: f(lo) and f(hi) must differ in sign
    debug_assert!(flo * gll_residual(n, hi) <= 0.0);
    let nn1 = (n * (n + 1)) as f64;
    let mut best = x;
    let mut best_res = f64::INFINITY;
    for _ in 0..100 {
        let (p, dp) = legendre_and_deriv(n, x);
        let f = (1.0 - x * x) * dp;
        if f.abs() < best_res {
            best_res = f.abs();
            best = x;
        }
        if f.abs() <= 1e-15 {
            break;
        }
        // maintain the bracket
        if f * flo > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = f / (nn1 * p); // -f/f' with f' = -n(n+1) L_n
        let mut xn = x + step;
        if !(xn > lo && xn < hi) || !xn.is_finite() {
            xn = 0.5 * (lo + hi);
        }
        if (xn - x).abs() < 1e-16 {
            x = xn;
            let r = gll_residual(n, x).abs();
            if r < best_res {
                best = x;
            }
            break;
        }
        x = xn;
    }
    best
}

/// GLL quadrature weights: w_j = 2 / (N(N+1) L_N(x_j)^2).
pub fn gll_weights(n: usize, nodes: &[f64]) -> Vec<f64> {
    let denom = (n * (n + 1)) as f64;
    nodes
        .iter()
        .map(|&x| {
            let (p, _) = legendre_and_deriv(n, x);
            2.0 / (denom * p * p)
        })
        .collect()
}

/// Barycentric weights for a node set: b_j = 1 / prod_{k!=j} (x_j - x_k).
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut b = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                b[j] *= nodes[j] - nodes[k];
            }
        }
        b[j] = 1.0 / b[j];
    }
    b
}

/// Evaluate all Lagrange cardinal functions (and derivatives) for the node
/// set at an arbitrary point x, via the barycentric formulas.
pub fn eval_basis(nodes: &[f64], bary: &[f64], x: f64, vals: &mut [f64], derivs: &mut [f64]) {
    let n = nodes.len();
    // exact-node short circuit: h_j(x_i) = delta_ij, h_j'(x_i) from the
    // differentiation-matrix formulas
    for i in 0..n {
        if (x - nodes[i]).abs() < 1e-14 {
            for j in 0..n {
                vals[j] = if i == j { 1.0 } else { 0.0 };
                derivs[j] = if i == j {
                    let mut s = 0.0;
                    for k in 0..n {
                        if k != i {
                            s += 1.0 / (nodes[i] - nodes[k]);
                        }
                    }
                    s
                } else {
                    (bary[j] / bary[i]) / (nodes[i] - nodes[j])
                };
            }
            return;
        }
    }
    let mut s1 = 0.0; // sum b_k/(x-x_k)
    let mut s2 = 0.0; // sum b_k/(x-x_k)^2
    for k in 0..n {
        let d = x - nodes[k];
        let t = bary[k] / d;
        s1 += t;
        s2 += t / d;
    }
    for j in 0..n {
        let d = x - nodes[j];
        let lj = (bary[j] / d) / s1;
        vals[j] = lj;
        derivs[j] = lj * (s2 / s1 - 1.0 / d);
    }
}
