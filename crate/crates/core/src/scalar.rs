//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! Core math is written against [`Real`], which is implemented for `f32` and
//! `f64`. The dense linear-algebra kernels that need a robust eigensolver or
//! factorization are routed through the trait so that each concrete type can
//! delegate to `nalgebra` without leaking its trait hierarchy into generic code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::DMatrix;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Symmetric eigendecomposition of the `n x n` row-major matrix `data`.
    ///
    /// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted ascending and
    /// the eigenvectors stored row-major with one eigenvector per column.
    fn symmetric_eigen(n: usize, data: &[Self]) -> (Vec<Self>, Vec<Self>);

    /// Lower Cholesky factor (row-major) or `None` when the matrix is not
    /// numerically positive definite.
    fn cholesky_lower(n: usize, data: &[Self]) -> Option<Vec<Self>>;

    /// Converts an `f64` literal; infallible for the supported types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn symmetric_eigen(n: usize, data: &[Self]) -> (Vec<Self>, Vec<Self>) {
                let m = DMatrix::<$t>::from_row_slice(n, n, data);
                let eig = m.symmetric_eigen();
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
                let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
                let mut vectors = vec![0.0; n * n];
                for (col, &k) in order.iter().enumerate() {
                    for row in 0..n {
                        vectors[row * n + col] = eig.eigenvectors[(row, k)];
                    }
                }
                (values, vectors)
            }

            fn cholesky_lower(n: usize, data: &[Self]) -> Option<Vec<Self>> {
                let m = DMatrix::<$t>::from_row_slice(n, n, data);
                let l = m.cholesky()?.unpack();
                let mut out = vec![0.0; n * n];
                for row in 0..n {
                    for col in 0..=row {
                        out[row * n + col] = l[(row, col)];
                    }
                }
                Some(out)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
