//! Small dense linear algebra: row-major matrices, an LDL^T factorization
//! for the coarse-grid solve, and 3x3 helpers for Newton inversion.

use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatG<T> {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<T>,
}

pub type Mat = MatG<f64>;

impl<T: Real> MatG<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            a: vec![T::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.a[i * n + i] = T::ONE;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, a: Vec<T>) -> Self {
        assert_eq!(a.len(), rows * cols);
        Self { rows, cols, a }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.a[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.a[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.a[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.a[j * self.rows + i] = self.a[i * self.cols + j];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for i in 0..self.rows {
            let mut s = T::ZERO;
            let row = self.row(i);
            for (aij, xj) in row.iter().zip(x.iter()) {
                s += *aij * *xj;
            }
            y[i] = s;
        }
    }

    pub fn cast<U: Real>(&self) -> MatG<U> {
        MatG {
            rows: self.rows,
            cols: self.cols,
            a: self.a.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// LDL^T factorization of a symmetric matrix, no pivoting.
///
/// Adequate for the assembled p=1 coarse problems, which are SPD after
/// nullspace handling.
pub struct Ldlt<T> {
    n: usize,
    l: Vec<T>,
    d: Vec<T>,
}

impl<T: Real> Ldlt<T> {
    pub fn factor(m: &MatG<T>) -> Option<Self> {
        assert_eq!(m.rows, m.cols);
        let n = m.rows;
        let mut l = vec![T::ZERO; n * n];
        let mut d = vec![T::ZERO; n];
        for j in 0..n {
            let mut dj = m.at(j, j);
            for k in 0..j {
                dj -= l[j * n + k] * l[j * n + k] * d[k];
            }
            if dj.to_f64().abs() < 1e-300 {
                return None;
            }
            d[j] = dj;
            l[j * n + j] = T::ONE;
            for i in (j + 1)..n {
                let mut v = m.at(i, j);
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k] * d[k];
                }
                l[i * n + j] = v / dj;
            }
        }
        Some(Self { n, l, d })
    }

    pub fn solve(&self, b: &[T], x: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        assert_eq!(x.len(), n);
        // forward: L y = b
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s;
        }
        // diagonal
        for i in 0..n {
            x[i] = x[i] / self.d[i];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s;
        }
    }
}

/// Solve a 3x3 system with partial pivoting. Returns None if singular.
pub fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = [
        [a[0][0], a[0][1], a[0][2], b[0]],
        [a[1][0], a[1][1], a[1][2], b[1]],
        [a[2][0], a[2][1], a[2][2], b[2]],
    ];
    for col in 0..3 {
        let mut piv = col;
        for r in (col + 1)..3 {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in (col + 1)..3 {
            let f = m[r][col] / m[col][col];
            for c in col..4 {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut s = m[i][3];
        for j in (i + 1)..3 {
            s -= m[i][j] * x[j];
        }
        x[i] = s / m[i][i];
    }
    Some(x)
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ldlt_solves_spd() {
        // A = M^T M + I is SPD
        let n = 5;
        let mut a = MatG::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    let mik = ((i * 3 + k * 7) % 11) as f64 / 11.0;
                    let mjk = ((j * 3 + k * 7) % 11) as f64 / 11.0;
                    s += mik * mjk;
                }
                a.set(i, j, s);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let f = Ldlt::factor(&a).unwrap();
        let mut x = vec![0.0; n];
        f.solve(&b, &mut x);
        let mut r = vec![0.0; n];
        a.matvec(&x, &mut r);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn solve3_pivots() {
        let a = [[0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 3.0]];
        let x = solve3(&a, &[4.0, 6.0, 9.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-14);
        assert!((x[1] - 4.0).abs() < 1e-14);
        assert!((x[2] - 3.0).abs() < 1e-14);
    }
}
