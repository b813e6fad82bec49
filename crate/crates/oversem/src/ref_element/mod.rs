//! Order-N Gauss-Lobatto-Legendre machinery: quadrature rules,
//! differentiation and interpolation matrices, and a registry that caches
//! them per order so setup cost is paid once.

pub mod gll;
pub mod tensor;

use crate::error::{Error, Result};
use crate::la::Mat;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub use tensor::{interp3, local_grad, local_grad_naive, local_grad_sliced, local_grad_transpose_add, tensor_apply, Axis, Dims};

/// GLL quadrature rule of order N: N+1 nodes in [-1,1] and positive weights.
#[derive(Debug, Clone)]
pub struct GllRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Nodal differentiation matrix D[i][j] = h_j'(xi_i) on the rule's nodes.
#[derive(Debug, Clone)]
pub struct DerivMatrix {
    pub order: usize,
    pub entries: Mat,
}

/// Interpolation matrix from the GLL(N) nodes to the GLL(N_q) nodes.
#[derive(Debug, Clone)]
pub struct InterpMatrix {
    pub from_order: usize,
    pub to_order: usize,
    pub entries: Mat,
}

/// Build the GLL rule of order n (1 <= n <= 15).
pub fn gll_rule(n: usize) -> Result<GllRule> {
    let nodes = gll::gll_nodes(n)?;
    let weights = gll::gll_weights(n, &nodes);
    Ok(GllRule {
        order: n,
        nodes,
        weights,
    })
}

/// Differentiation matrix for the rule's Lagrange cardinal functions.
///
/// Off-diagonal entries use the barycentric formula; diagonals use the
/// negative row-sum so each row annihilates constants exactly.
pub fn deriv_matrix(rule: &GllRule) -> DerivMatrix {
    let n = rule.nodes.len();
    let bary = gll::barycentric_weights(&rule.nodes);
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let dij = (bary[j] / bary[i]) / (rule.nodes[i] - rule.nodes[j]);
                m.set(i, j, dij);
                diag -= dij;
            }
        }
        m.set(i, i, diag);
    }
    DerivMatrix {
        order: rule.order,
        entries: m,
    }
}

/// Interpolation matrix mapping nodal values on `from` to values at the
/// nodes of `to`. Rows of the N -> N case form the identity.
pub fn interp_matrix(from: &GllRule, to: &GllRule) -> InterpMatrix {
    let entries = interp_matrix_to_points(from, &to.nodes);
    InterpMatrix {
        from_order: from.order,
        to_order: to.order,
        entries,
    }
}

/// Interpolation matrix from a rule's nodes to an arbitrary point set.
pub fn interp_matrix_to_points(from: &GllRule, points: &[f64]) -> Mat {
    let n = from.nodes.len();
    let bary = gll::barycentric_weights(&from.nodes);
    let mut m = Mat::zeros(points.len(), n);
    let mut vals = vec![0.0; n];
    let mut derivs = vec![0.0; n];
    for (q, &x) in points.iter().enumerate() {
        gll::eval_basis(&from.nodes, &bary, x, &mut vals, &mut derivs);
        for j in 0..n {
            m.set(q, j, vals[j]);
        }
    }
    m
}

/// Everything an element operator needs at one polynomial order, built once
/// and shared read-only across ranks.
#[derive(Debug)]
pub struct ElementBasis {
    pub rule: GllRule,
    pub deriv: DerivMatrix,
    pub bary: Vec<f64>,
}

impl ElementBasis {
    pub fn new(order: usize) -> Result<Self> {
        let rule = gll_rule(order)?;
        let deriv = deriv_matrix(&rule);
        let bary = gll::barycentric_weights(&rule.nodes);
        Ok(Self { rule, deriv, bary })
    }

    pub fn order(&self) -> usize {
        self.rule.order
    }

    pub fn n1(&self) -> usize {
        self.rule.order + 1
    }

    pub fn dims(&self) -> Dims {
        Dims::cube(self.n1())
    }

    /// Values and derivatives of all cardinal functions at coordinate x.
    pub fn basis_at(&self, x: f64, vals: &mut [f64], derivs: &mut [f64]) {
        gll::eval_basis(&self.rule.nodes, &self.bary, x, vals, derivs);
    }
}

type RegistryKey = (usize, usize);

fn registry() -> &'static Mutex<HashMap<RegistryKey, Arc<ElementBasis>>> {
    static REG: OnceLock<Mutex<HashMap<RegistryKey, Arc<ElementBasis>>>> = OnceLock::new();
    REG.get_or_init(|| Mutex::new(HashMap::new()))
}

fn interp_registry() -> &'static Mutex<HashMap<RegistryKey, Arc<InterpMatrix>>> {
    static REG: OnceLock<Mutex<HashMap<RegistryKey, Arc<InterpMatrix>>>> = OnceLock::new();
    REG.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached ElementBasis for an order.
pub fn basis(order: usize) -> Result<Arc<ElementBasis>> {
    if order < 1 || order > gll::MAX_ORDER {
        return Err(Error::InvalidOrder(order));
    }
    let mut reg = registry().lock().unwrap();
    if let Some(b) = reg.get(&(order, 0)) {
        return Ok(b.clone());
    }
    let b = Arc::new(ElementBasis::new(order)?);
    reg.insert((order, 0), b.clone());
    Ok(b)
}

/// Cached interpolation matrix GLL(from) -> GLL(to). Requires to >= from
/// only by convention of its main (dealiasing) use; any pair is valid.
pub fn interp(from: usize, to: usize) -> Result<Arc<InterpMatrix>> {
    let mut reg = interp_registry().lock().unwrap();
    if let Some(m) = reg.get(&(from, to)) {
        return Ok(m.clone());
    }
    let bf = gll_rule(from)?;
    let bt = gll_rule(to)?;
    let m = Arc::new(interp_matrix(&bf, &bt));
    reg.insert((from, to), m.clone());
    Ok(m)
}
