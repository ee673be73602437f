//! Finite point sets whose exact scores drive every experiment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{mean_and_covariance, norm, Matrix};
use crate::rng;
use crate::scalar::Real;

const NORMALIZE_TOL: f64 = 1e-9;
const NORMALIZE_MAX_ITER: usize = 100;

/// An `N x D` point set stored row-major, with centering/normalization metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDataset<T> {
    points: Vec<T>,
    dim: usize,
    radius: T,
    centered: bool,
}

impl<T: Real> EmpiricalDataset<T> {
    /// Wraps row-major points. No centering or radius is claimed.
    pub fn from_points(points: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dimension must be at least 1".into()));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not form a non-empty set of {dim}-vectors",
                points.len()
            )));
        }
        if let Some(k) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!("non-finite coordinate at point {}", k / dim)));
        }
        Ok(Self { points, dim, radius: T::zero(), centered: false })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        Self::from_points(rows.concat(), dim)
    }

    /// The symmetric pair `{-1, +1}` in one dimension.
    pub fn two_point_1d() -> Self {
        Self { points: vec![-T::one(), T::one()], dim: 1, radius: T::one(), centered: true }
    }

    /// `n` points uniform on the radius-`r` sphere in `R^d` (Gaussian draw, then projection).
    pub fn hypersphere(d: usize, r: T, n: usize, seed: u64) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::Shape("hypersphere needs d >= 1 and n >= 1".into()));
        }
        if !(r > T::zero()) {
            return Err(Error::Domain { what: "radius", value: r.to_f64_lossy(), range: "(0, inf)" });
        }
        let mut rng = rng::stream(seed, 0);
        let mut points = Vec::with_capacity(n * d);
        let mut buf = vec![T::zero(); d];
        for _ in 0..n {
            let len = loop {
                rng::fill_standard_normal(&mut rng, &mut buf);
                let len = norm(&buf);
                if len > T::zero() {
                    break len;
                }
            };
            points.extend(buf.iter().map(|&v| v * r / len));
        }
        Ok(Self { points, dim: d, radius: r, centered: false })
    }

    /// `n_per_mode` isotropic Gaussian draws around each center, emitted mode by mode.
    pub fn gaussian_mixture(centers: &[Vec<T>], std: T, n_per_mode: usize, seed: u64) -> Result<Self> {
        let dim = centers.first().map_or(0, Vec::len);
        if centers.is_empty() || dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("mixture needs at least one center and equal-length centers".into()));
        }
        if !(std >= T::zero()) {
            return Err(Error::Domain { what: "std", value: std.to_f64_lossy(), range: "[0, inf)" });
        }
        if n_per_mode == 0 {
            return Err(Error::Shape("n_per_mode must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, 0);
        let mut points = Vec::with_capacity(centers.len() * n_per_mode * dim);
        for c in centers {
            for _ in 0..n_per_mode {
                for &ci in c {
                    points.push(ci + std * rng::standard_normal::<T>(&mut rng));
                }
            }
        }
        Self::from_points(points, dim)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Common norm after normalization; zero when not norm-constrained.
    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_normalized(&self) -> bool {
        self.centered && self.radius > T::zero()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn point(&self, j: usize) -> &[T] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<T> {
        mean_and_covariance(&self.points, self.dim).0
    }

    /// Population covariance (divisor `N`).
    pub fn covariance(&self) -> Matrix<T> {
        mean_and_covariance(&self.points, self.dim).1
    }

    /// Pads every point with zeros up to `dim` coordinates, keeping the metadata.
    pub fn embed(&self, dim: usize) -> Result<Self> {
        if dim < self.dim {
            return Err(Error::Shape(format!("cannot embed {}-dim data into {dim} dimensions", self.dim)));
        }
        let mut points = Vec::with_capacity(self.len() * dim);
        for p in self.iter() {
            points.extend_from_slice(p);
            points.extend(std::iter::repeat_n(T::zero(), dim - self.dim));
        }
        Ok(Self { points, dim, radius: self.radius, centered: self.centered })
    }

    fn coordinate_sum(&self) -> Vec<T> {
        let mut sum = vec![T::zero(); self.dim];
        for p in self.iter() {
            for (s, &v) in sum.iter_mut().zip(p) {
                *s = *s + v;
            }
        }
        sum
    }

    fn max_abs(&self) -> T {
        self.points.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Max-norm of the coordinate sum relative to the centering tolerance scale.
    pub fn centering_residual(&self) -> T {
        let scale = T::one().max(self.max_abs());
        self.coordinate_sum().iter().fold(T::zero(), |m, v| m.max(v.abs())) / scale
    }

    /// Centers the set and puts every point on the radius-`r` sphere.
    ///
    /// Rescaling after centering moves the mean again, so the two projections
    /// alternate until the sum and norm conditions both hold to `1e-9`.
    pub fn center_and_normalize(&self, r: T) -> Result<Self> {
        if !(r > T::zero()) {
            return Err(Error::Domain { what: "radius", value: r.to_f64_lossy(), range: "(0, inf)" });
        }
        let tol = T::lit(NORMALIZE_TOL);
        let mut current = self.points.clone();
        let mut residual = T::infinity();
        for _ in 0..NORMALIZE_MAX_ITER {
            let probe = Self { points: current.clone(), dim: self.dim, radius: r, centered: true };
            let mean = probe.mean();
            for p in current.chunks_exact_mut(self.dim) {
                for (v, &m) in p.iter_mut().zip(&mean) {
                    *v = *v - m;
                }
                let len = norm(p);
                if len == T::zero() {
                    return Err(Error::DegenerateInput("a point sits exactly at the mean after centering".into()));
                }
                p.iter_mut().for_each(|v| *v = *v * r / len);
            }
            let out = Self { points: current.clone(), dim: self.dim, radius: r, centered: true };
            residual = out.centering_residual();
            let norms_ok = out.iter().all(|p| (norm(p) - r).abs() < tol * r);
            if residual < tol && norms_ok {
                return Ok(out);
            }
        }
        Err(Error::Normalization { iterations: NORMALIZE_MAX_ITER, residual: residual.to_f64_lossy() })
    }

    /// Checks the invariants the metadata claims.
    pub fn validate(&self) -> Result<()> {
        if self.centered && !(self.centering_residual() < T::lit(NORMALIZE_TOL)) {
            return Err(Error::Precondition("dataset flagged centered but its sum is not zero".into()));
        }
        if self.radius > T::zero() {
            let tol = T::lit(NORMALIZE_TOL) * self.radius;
            if self.iter().any(|p| (norm(p) - self.radius).abs() >= tol) {
                return Err(Error::Precondition("dataset flagged normalized but a norm differs from r".into()));
            }
        }
        Ok(())
    }

    /// Serializes as headerless CSV, 17 significant digits per value.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 24);
        for p in self.iter() {
            for (k, v) in p.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{:.16e}", v.to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut dim = 0usize;
        let mut rows = 0usize;
        for (i, line) in text.lines().enumerate() {
            let row = i + 1;
            if line.trim().is_empty() {
                return Err(Error::Parse { row, column: 1, message: "empty row".into() });
            }
            let mut count = 0;
            for (k, cell) in line.split(',').enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row,
                    column: k + 1,
                    message: format!("non-numeric cell {:?}", cell.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, column: k + 1, message: "non-finite value".into() });
                }
                points.push(T::lit(v));
                count += 1;
            }
            if rows == 0 {
                dim = count;
            } else if count != dim {
                return Err(Error::Parse {
                    row,
                    column: count.min(dim) + 1,
                    message: format!("ragged row: {count} cells, expected {dim}"),
                });
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Parse { row: 1, column: 1, message: "empty file".into() });
        }
        Self::from_points(points, dim)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?)
    }
}
