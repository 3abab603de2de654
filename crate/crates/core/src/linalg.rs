//! Small dense linear algebra on row-major `Vec` storage.
//!
//! Every system solved in this crate is tiny (information matrices of a
//! handful of hazard coefficients, WLS normal equations, numerical Jacobians),
//! so plain Gaussian elimination and Cholesky are sufficient.

use crate::scalar::Scalar;

/// Square matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<F> {
    dim: usize,
    data: Vec<F>,
}

impl<F: Scalar> SquareMatrix<F> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![F::zero(); dim * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "matrix must be square");
            data.extend_from_slice(row);
        }
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.dim + c] = v;
    }

    #[inline]
    pub fn add_to(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.dim + c] = self.data[r * self.dim + c] + v;
    }

    /// Adds `scale * x x^T`.
    pub fn add_outer(&mut self, x: &[F], scale: F) {
        for r in 0..self.dim {
            let xr = x[r] * scale;
            for c in 0..self.dim {
                self.add_to(r, c, xr * x[c]);
            }
        }
    }

    pub fn mul_vec(&self, x: &[F]) -> Vec<F> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }

    /// Solves `self * x = b` for symmetric positive-definite `self`.
    /// Returns `None` when a pivot is not strictly positive (relative to the
    /// diagonal scale).
    pub fn cholesky_solve(&self, b: &[F]) -> Option<Vec<F>> {
        let n = self.dim;
        if n == 0 {
            return Some(Vec::new());
        }
        let scale = (0..n)
            .map(|i| self.get(i, i).abs())
            .fold(F::zero(), F::max);
        if !(scale > F::zero()) || !scale.is_finite() {
            return None;
        }
        let threshold = scale * F::epsilon() * F::lit(16.0);
        let mut l = vec![F::zero(); n * n];
        for j in 0..n {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag = diag - l[j * n + k] * l[j * n + k];
            }
            if !(diag > threshold) {
                return None;
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        let mut y = vec![F::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        let mut x = vec![F::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        Some(x)
    }

    /// Solves `self * x = b` by Gaussian elimination with partial pivoting.
    /// Returns `None` for a numerically singular matrix.
    pub fn lu_solve(&self, b: &[F]) -> Option<Vec<F>> {
        let n = self.dim;
        let mut a = self.data.clone();
        let mut rhs = b.to_vec();
        let scale = a.iter().fold(F::zero(), |m, v| m.max(v.abs()));
        if n > 0 && !(scale > F::zero()) {
            return None;
        }
        let threshold = scale * F::epsilon() * F::lit(64.0);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    a[i * n + col]
                        .abs()
                        .partial_cmp(&a[j * n + col].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("non-empty pivot range");
            if !(a[pivot * n + col].abs() > threshold) {
                return None;
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                }
                rhs.swap(pivot, col);
            }
            let p = a[col * n + col];
            for row in (col + 1)..n {
                let factor = a[row * n + col] / p;
                if factor == F::zero() {
                    continue;
                }
                for k in col..n {
                    a[row * n + k] = a[row * n + k] - factor * a[col * n + k];
                }
                rhs[row] = rhs[row] - factor * rhs[col];
            }
        }
        let mut x = vec![F::zero(); n];
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in (i + 1)..n {
                s = s - a[i * n + k] * x[k];
            }
            x[i] = s / a[i * n + i];
        }
        Some(x)
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn max_abs<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, x| m.max(x.abs()))
}
