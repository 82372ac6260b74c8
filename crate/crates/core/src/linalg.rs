//! Small dense matrices for the low-dimensional toys (d ≲ 16).

use std::ops::{Index, IndexMut};

use crate::error::{Result, SagdError};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<R> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![R::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![R::one(); n])
    }

    pub fn from_diag(diag: &[R]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<R>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(SagdError::ShapeMismatch("matrix rows must be nonempty and equal length".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<R>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(SagdError::ShapeMismatch(format!("{rows}x{cols} matrix needs {} values", rows * cols)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Counter-clockwise rotation in the plane.
    pub fn rotation2(theta: R) -> Self {
        let (s, c) = theta.sin_cos();
        Self { rows: 2, cols: 2, data: vec![c, -s, s, c] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(SagdError::ShapeMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[R]) -> Vec<R> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn matvec_t(&self, x: &[R]) -> Vec<R> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![R::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * xi;
            }
        }
        out
    }

    pub fn scaled(&self, a: R) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * a).collect() }
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: R, other: &Self, b: R) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(SagdError::ShapeMismatch("matrix sum of different shapes".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&x, &y)| a * x + b * y).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> R {
        self.data.iter().zip(&other.data).fold(R::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: R) -> bool {
        self.is_square() && self.max_abs_diff(&self.transpose()) <= tol
    }

    /// Checks `UᵀU = I` within `tol` (max abs entry).
    pub fn has_orthonormal_columns(&self, tol: R) -> bool {
        let gram = self.transpose().matmul(self).expect("shapes agree");
        gram.max_abs_diff(&Self::identity(self.cols)) <= tol
    }

    pub fn cholesky(&self) -> Result<Cholesky<R>> {
        Cholesky::new(self)
    }
}

impl<R> Index<(usize, usize)> for Matrix<R> {
    type Output = R;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &R {
        &self.data[i * self.cols + j]
    }
}

impl<R> IndexMut<(usize, usize)> for Matrix<R> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut R {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::zero(), |s, (&x, &y)| s + x * y)
}

pub fn norm<R: Real>(a: &[R]) -> R {
    dot(a, a).sqrt()
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<R> {
    lower: Matrix<R>,
}

impl<R: Real> Cholesky<R> {
    pub fn new(a: &Matrix<R>) -> Result<Self> {
        if !a.is_square() {
            return Err(SagdError::ShapeMismatch("cholesky of a non-square matrix".into()));
        }
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > R::zero()) || !d.is_finite() {
                return Err(SagdError::InvalidArgument(format!("matrix is not positive definite (pivot {j} = {d})")));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<R> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[R]) -> Vec<R> {
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..y.len() {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[R]) -> Vec<R> {
        let l = &self.lower;
        let n = y.len();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[R]) -> Vec<R> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> R {
        let two = R::one() + R::one();
        (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<R>() * two
    }

    /// `L z`, which maps standard normal draws to `N(0, A)`.
    pub fn mul_lower(&self, z: &[R]) -> Vec<R> {
        self.lower.matvec(z)
    }

    pub fn inverse(&self) -> Matrix<R> {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![R::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = R::zero());
            e[j] = R::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}
