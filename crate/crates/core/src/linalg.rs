//! Small dense row-major matrices for Hessians and covariances (D up to ~64).

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major storage. Panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn scaled(&self, k: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * k).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-T::one()))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] = out.data[i * other.cols + j] + a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn max_abs_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replaces the matrix with `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in 0..i {
                let v = (self.get(i, j) + self.get(j, i)) * half;
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    /// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
    pub fn symmetric_eigen(&self) -> SymmetricEigen<T> {
        assert_eq!(self.rows, self.cols, "eigendecomposition needs a square matrix");
        let (values, vectors) = T::symmetric_eigen(self.rows, &self.data);
        SymmetricEigen { values, vectors: Self::from_row_major(self.rows, self.rows, vectors) }
    }

    pub fn cholesky(&self) -> Option<Self> {
        assert_eq!(self.rows, self.cols, "Cholesky needs a square matrix");
        T::cholesky_lower(self.rows, &self.data).map(|l| Self::from_row_major(self.rows, self.rows, l))
    }

    /// Principal square root of a symmetric positive semidefinite matrix.
    /// Negative eigenvalues produced by rounding are clamped to zero.
    pub fn sqrt_psd(&self) -> Self {
        let eig = self.symmetric_eigen();
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        for (k, &lambda) in eig.values.iter().enumerate() {
            let root = lambda.max(T::zero()).sqrt();
            for i in 0..n {
                let vi = eig.vectors.get(i, k) * root;
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + vi * eig.vectors.get(j, k);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Real> SymmetricEigen<T> {
    pub fn vector(&self, k: usize) -> Vec<T> {
        (0..self.vectors.rows()).map(|i| self.vectors.get(i, k)).collect()
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn dist_sq<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Mean vector and population covariance (divisor `n`) of row-major points.
pub fn mean_and_covariance<T: Real>(points: &[T], dim: usize) -> (Vec<T>, Matrix<T>) {
    let n = points.len() / dim;
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut mean = vec![T::zero(); dim];
    for p in points.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv_n);
    let mut cov = Matrix::zeros(dim, dim);
    for p in points.chunks_exact(dim) {
        for i in 0..dim {
            let di = p[i] - mean[i];
            for j in 0..=i {
                let v = cov.get(i, j) + di * (p[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let v = cov.get(i, j) * inv_n;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    (mean, cov)
}
