//! Empirical instruments: potential scans along variance-preserving interpolation
//! paths, the data-space Fréchet metric, mode entropy, and trajectory diagnostics.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, mean_and_covariance, Matrix};
use crate::sampler::SamplerRun;
use crate::scalar::Real;
use crate::score::ExactScoreModel;

pub const DEFAULT_ALPHA_POINTS: usize = 141;
pub const DEFAULT_MINIMA_WINDOW: usize = 3;
pub const DEFAULT_POOL_WINDOW: usize = 10;
const FRECHET_JITTER: f64 = 1e-10;

/// `cos(alpha) x1 + sin(alpha) x2`.
pub fn interpolation_path<T: Real>(x1: &[T], x2: &[T], alpha: T) -> Vec<T> {
    let (s, c) = alpha.sin_cos();
    x1.iter().zip(x2).map(|(&a, &b)| c * a + s * b).collect()
}

/// Tangent `-sin(alpha) x1 + cos(alpha) x2` of the interpolation path.
pub fn interpolation_tangent<T: Real>(x1: &[T], x2: &[T], alpha: T) -> Vec<T> {
    let (s, c) = alpha.sin_cos();
    x1.iter().zip(x2).map(|(&a, &b)| c * b - s * a).collect()
}

/// `n` equally spaced angles over `[lo, hi]`.
pub fn alpha_grid<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / T::from_usize(n - 1).unwrap();
    (0..n).map(|k| if k + 1 == n { hi } else { lo + step * T::from_usize(k).unwrap() }).collect()
}

/// 141 angles over `[-pi/5, 7 pi/10]`.
pub fn default_alpha_grid<T: Real>() -> Vec<T> {
    alpha_grid(T::lit(-PI / 5.0), T::lit(0.7 * PI), DEFAULT_ALPHA_POINTS)
}

/// Potential along interpolation paths, one row per generative time.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialScan<T> {
    pub alpha_grid: Vec<T>,
    pub times: Vec<T>,
    /// `times.len() x alpha_grid.len()`, each row zero at the first angle.
    pub values: Vec<Vec<T>>,
}

impl<T: Real> PotentialScan<T> {
    pub fn minima_counts(&self, window: usize) -> Vec<usize> {
        self.values.iter().map(|row| count_local_minima(row, window)).collect()
    }

    /// Header `t,minima,alpha=<a>...`; one row per time.
    pub fn to_csv_string(&self, window: usize) -> String {
        let mut out = String::from("t,minima");
        for a in &self.alpha_grid {
            let _ = write!(out, ",alpha={:.16e}", a.to_f64_lossy());
        }
        out.push('\n');
        for ((t, row), minima) in self.times.iter().zip(&self.values).zip(self.minima_counts(window)) {
            let _ = write!(out, "{:.16e},{minima}", t.to_f64_lossy());
            for v in row {
                let _ = write!(out, ",{:.16e}", v.to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }
}

/// Trapezoidal line integral of `grad u . v` along each path, anchored at the first angle.
///
/// `x1_path[k]` and `x2_path[k]` are the path endpoints at generative time `times[k]`.
pub fn potential_scan<T: Real>(
    model: &ExactScoreModel<T>,
    x1_path: &[Vec<T>],
    x2_path: &[Vec<T>],
    alpha_grid: &[T],
    times: &[T],
) -> Result<PotentialScan<T>> {
    check_scan_shapes(model, x1_path, x2_path, alpha_grid, times)?;
    let half = T::lit(0.5);
    let values = times
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let level = model.generative_level(t)?;
            let (x1, x2) = (&x1_path[k], &x2_path[k]);
            let slopes: Vec<T> = alpha_grid
                .iter()
                .map(|&a| {
                    let x = interpolation_path(x1, x2, a);
                    dot(&model.potential_gradient_at(&x, &level), &interpolation_tangent(x1, x2, a))
                })
                .collect();
            let mut row = Vec::with_capacity(alpha_grid.len());
            let mut acc = T::zero();
            row.push(acc);
            for i in 1..alpha_grid.len() {
                acc = acc + half * (slopes[i - 1] + slopes[i]) * (alpha_grid[i] - alpha_grid[i - 1]);
                row.push(acc);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PotentialScan { alpha_grid: alpha_grid.to_vec(), times: times.to_vec(), values })
}

/// Direct evaluation `u(x(alpha)) - u(x(alpha_0))`; the oracle for [`potential_scan`].
pub fn potential_section<T: Real>(
    model: &ExactScoreModel<T>,
    x1_path: &[Vec<T>],
    x2_path: &[Vec<T>],
    alpha_grid: &[T],
    times: &[T],
) -> Result<PotentialScan<T>> {
    check_scan_shapes(model, x1_path, x2_path, alpha_grid, times)?;
    let mut values = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let level = model.generative_level(t)?;
        let u: Vec<T> =
            alpha_grid.iter().map(|&a| model.potential_at(&interpolation_path(&x1_path[k], &x2_path[k], a), &level)).collect();
        values.push(u.iter().map(|&v| v - u[0]).collect());
    }
    Ok(PotentialScan { alpha_grid: alpha_grid.to_vec(), times: times.to_vec(), values })
}

fn check_scan_shapes<T: Real>(
    model: &ExactScoreModel<T>,
    x1_path: &[Vec<T>],
    x2_path: &[Vec<T>],
    alpha_grid: &[T],
    times: &[T],
) -> Result<()> {
    if x1_path.len() != times.len() || x2_path.len() != times.len() {
        return Err(Error::Shape(format!(
            "paths have {} and {} states for {} times",
            x1_path.len(),
            x2_path.len(),
            times.len()
        )));
    }
    let d = model.dim();
    if x1_path.iter().chain(x2_path).any(|x| x.len() != d) {
        return Err(Error::Shape(format!("path states must have dimension {d}")));
    }
    if alpha_grid.len() < 2 {
        return Err(Error::Arity("alpha grid needs at least two angles".into()));
    }
    Ok(())
}

/// Centered moving average over `window` points, keeping only full windows.
pub fn moving_average<T: Real>(values: &[T], window: usize) -> Vec<T> {
    let w = window.max(1);
    if values.len() < w {
        return Vec::new();
    }
    let k = T::from_usize(w).unwrap();
    values.windows(w).map(|win| win.iter().copied().sum::<T>() / k).collect()
}

/// Strict interior local minima after moving-average smoothing (`window <= 1` disables it).
pub fn count_local_minima<T: Real>(row: &[T], window: usize) -> usize {
    let smooth = moving_average(row, window);
    smooth.windows(3).filter(|w| w[1] < w[0] && w[1] < w[2]).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport<T> {
    /// Squared 2-Wasserstein distance between the Gaussian fits.
    pub frechet: T,
    pub n_reference: usize,
    pub n_generated: usize,
    /// Whether a rank-deficient covariance was regularized with `1e-10 I`.
    pub jittered: bool,
}

/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)` for row-major point sets.
pub fn frechet_gaussian<T: Real>(reference: &[T], generated: &[T], dim: usize) -> Result<QualityReport<T>> {
    if dim == 0 || reference.len() % dim != 0 || generated.len() % dim != 0 {
        return Err(Error::Shape(format!("point sets are not rows of dimension {dim}")));
    }
    let (n1, n2) = (reference.len() / dim, generated.len() / dim);
    if n1 < dim + 1 || n2 < dim + 1 {
        return Err(Error::Arity(format!("need at least {} points per set, got {n1} and {n2}", dim + 1)));
    }
    let (m1, c1) = mean_and_covariance(reference, dim);
    let (m2, c2) = mean_and_covariance(generated, dim);
    let (c1, j1) = regularize(c1);
    let (c2, j2) = regularize(c2);
    let r1 = c1.sqrt_psd();
    let cross = r1.matmul(&c2).matmul(&r1).sqrt_psd();
    let tr = c1.trace() + c2.trace() - T::lit(2.0) * cross.trace();
    let frechet = (dist_sq(&m1, &m2) + tr).max(T::zero());
    Ok(QualityReport { frechet, n_reference: n1, n_generated: n2, jittered: j1 || j2 })
}

fn regularize<T: Real>(mut c: Matrix<T>) -> (Matrix<T>, bool) {
    c.symmetrize();
    let smallest = c.symmetric_eigen().values[0];
    let scale = c.as_slice().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if smallest > T::epsilon() * scale {
        return (c, false);
    }
    let n = c.rows();
    (c.add(&Matrix::identity(n).scaled(T::lit(FRECHET_JITTER))), true)
}

/// Nearest-center assignment counts.
pub fn mode_histogram<T: Real>(points: &[T], dim: usize, centers: &[Vec<T>]) -> Result<Vec<usize>> {
    if centers.is_empty() {
        return Err(Error::Arity("mode histogram needs at least one center".into()));
    }
    if dim == 0 || points.len() % dim != 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Shape(format!("points and centers must have dimension {dim}")));
    }
    let mut counts = vec![0; centers.len()];
    for p in points.chunks_exact(dim) {
        let mut best = (0, T::infinity());
        for (j, c) in centers.iter().enumerate() {
            let d = dist_sq(p, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        counts[best.0] += 1;
    }
    Ok(counts)
}

/// Shannon entropy (nats) of the nearest-center assignment frequencies.
pub fn mode_entropy<T: Real>(points: &[T], dim: usize, centers: &[Vec<T>]) -> Result<T> {
    let counts = mode_histogram(points, dim, centers)?;
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(T::zero());
    }
    let n = T::from_usize(total).unwrap();
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = T::from_usize(c).unwrap() / n;
            -p * p.ln()
        })
        .sum::<T>();
    Ok(h.max(T::zero()))
}

fn pearson<T: Real>(a: &[T], b: &[T]) -> Option<T> {
    let n = T::from_usize(a.len()).unwrap();
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab = sab + dx * dy;
        saa = saa + dx * dx;
        sbb = sbb + dy * dy;
    }
    let denom = (saa * sbb).sqrt();
    (denom > T::zero()).then(|| (sab / denom).max(-T::one()).min(T::one()))
}

/// Pearson correlation of every chain's state with a reference chain, step by step.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTrajectory<T> {
    pub reference: usize,
    pub grid: Vec<T>,
    /// `values[step][chain]`.
    pub values: Vec<Vec<T>>,
    /// Entries whose correlation was undefined (zero variance) and recorded as 0.
    pub zero_variance: Vec<Vec<bool>>,
    /// Steps pooled per correlation; 1 unless the run is one-dimensional.
    pub pool_window: usize,
}

impl<T: Real> CorrelationTrajectory<T> {
    /// Mean absolute correlation with the other chains at `step`.
    pub fn mean_abs(&self, step: usize) -> T {
        let row = &self.values[step];
        let others: Vec<T> = row.iter().enumerate().filter(|&(c, _)| c != self.reference).map(|(_, v)| v.abs()).collect();
        if others.is_empty() {
            return T::zero();
        }
        others.iter().copied().sum::<T>() / T::from_usize(others.len()).unwrap()
    }

    /// Header `step,s,chain_0..`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("step,s");
        for c in 0..self.values.first().map_or(0, Vec::len) {
            let _ = write!(out, ",chain_{c}");
        }
        out.push('\n');
        for (k, (s, row)) in self.grid.iter().zip(&self.values).enumerate() {
            let _ = write!(out, "{k},{:.16e}", s.to_f64_lossy());
            for v in row {
                let _ = write!(out, ",{:.16e}", v.to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }
}

/// Correlates state vectors across coordinates; for `D = 1` the trailing
/// `pool_window` steps are pooled instead (fewer at the start of the run).
pub fn correlation_trajectory<T: Real>(
    run: &SamplerRun<T>,
    reference_index: usize,
    pool_window: usize,
) -> Result<CorrelationTrajectory<T>> {
    let traj = run.trajectories.as_ref().ok_or_else(|| Error::Precondition("run did not store trajectories".into()))?;
    let (s, n, d) = (run.batch(), run.n_states(), run.dim);
    if reference_index >= s {
        return Err(Error::Arity(format!("reference chain {reference_index} out of range for {s} chains")));
    }
    let window = if d == 1 { pool_window.max(2) } else { 1 };
    let gather = |chain: usize, step: usize| -> Vec<T> {
        let lo = (step + 1).saturating_sub(window);
        let base = chain * n * d;
        traj[base + lo * d..base + (step + 1) * d].to_vec()
    };
    let mut values = Vec::with_capacity(n);
    let mut zero_variance = Vec::with_capacity(n);
    for step in 0..n {
        let r = gather(reference_index, step);
        let (row, flags): (Vec<T>, Vec<bool>) = (0..s)
            .map(|c| match pearson(&r, &gather(c, step)) {
                Some(v) => (v, false),
                None => (T::zero(), true),
            })
            .unzip();
        values.push(row);
        zero_variance.push(flags);
    }
    Ok(CorrelationTrajectory { reference: reference_index, grid: run.grid.clone(), values, zero_variance, pool_window: window })
}

/// Selected coordinates min-max normalized per coordinate over the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateTrajectories<T> {
    pub coordinates: Vec<usize>,
    pub grid: Vec<T>,
    pub chains: usize,
    /// `values[coordinate][chain * n_states + step]`, in `[0, 1]`.
    pub values: Vec<Vec<T>>,
    /// Coordinates with zero range, whose values are all set to 0.5.
    pub constant: Vec<bool>,
}

impl<T: Real> CoordinateTrajectories<T> {
    pub fn value(&self, coordinate: usize, chain: usize, step: usize) -> T {
        self.values[coordinate][chain * self.grid.len() + step]
    }

    /// Header `chain,step,s,x_<i>...` for the selected coordinates.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("chain,step,s");
        for i in &self.coordinates {
            let _ = write!(out, ",x_{i}");
        }
        out.push('\n');
        for c in 0..self.chains {
            for (k, s) in self.grid.iter().enumerate() {
                let _ = write!(out, "{c},{k},{:.16e}", s.to_f64_lossy());
                for j in 0..self.coordinates.len() {
                    let _ = write!(out, ",{:.16e}", self.value(j, c, k).to_f64_lossy());
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn coordinate_trajectories<T: Real>(run: &SamplerRun<T>, coordinates: &[usize]) -> Result<CoordinateTrajectories<T>> {
    let traj = run.trajectories.as_ref().ok_or_else(|| Error::Precondition("run did not store trajectories".into()))?;
    if let Some(&bad) = coordinates.iter().find(|&&i| i >= run.dim) {
        return Err(Error::Arity(format!("coordinate {bad} out of range for dimension {}", run.dim)));
    }
    let half = T::lit(0.5);
    let mut values = Vec::with_capacity(coordinates.len());
    let mut constant = Vec::with_capacity(coordinates.len());
    for &i in coordinates {
        let raw: Vec<T> = traj.chunks_exact(run.dim).map(|x| x[i]).collect();
        let lo = raw.iter().copied().fold(T::infinity(), T::min);
        let hi = raw.iter().copied().fold(T::neg_infinity(), T::max);
        let range = hi - lo;
        if range > T::zero() {
            values.push(raw.iter().map(|&v| (v - lo) / range).collect());
            constant.push(false);
        } else {
            values.push(vec![half; raw.len()]);
            constant.push(true);
        }
    }
    Ok(CoordinateTrajectories { coordinates: coordinates.to_vec(), grid: run.grid.clone(), chains: run.batch(), values, constant })
}

/// Per-step batch mean and variance of one coordinate (population divisor).
pub fn batch_moments<T: Real>(run: &SamplerRun<T>, coordinate: usize) -> Result<Vec<(T, T)>> {
    if coordinate >= run.dim {
        return Err(Error::Arity(format!("coordinate {coordinate} out of range for dimension {}", run.dim)));
    }
    (0..run.n_states())
        .map(|k| {
            let states = run.states_at(k).ok_or_else(|| Error::Precondition("run did not store trajectories".into()))?;
            let col: Vec<T> = states.chunks_exact(run.dim).map(|x| x[coordinate]).collect();
            Ok(mean_variance(&col))
        })
        .collect()
}

fn mean_variance<T: Real>(values: &[T]) -> (T, T) {
    let n = T::from_usize(values.len()).unwrap();
    let m = values.iter().copied().sum::<T>() / n;
    let v = values.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / n;
    (m, v)
}

/// Sample bimodality coefficient; values above 5/9 suggest more than one mode.
pub fn bimodality_coefficient<T: Real>(values: &[T]) -> Result<T> {
    let n = values.len();
    if n < 4 {
        return Err(Error::Arity(format!("bimodality coefficient needs at least 4 values, got {n}")));
    }
    let (m, v) = mean_variance(values);
    if !(v > T::zero()) {
        return Err(Error::DegenerateInput("values have zero variance".into()));
    }
    let nf = T::from_usize(n).unwrap();
    let m3 = values.iter().map(|&x| (x - m).powi(3)).sum::<T>() / nf;
    let m4 = values.iter().map(|&x| (x - m).powi(4)).sum::<T>() / nf;
    let one = T::one();
    let (two, three) = (T::lit(2.0), T::lit(3.0));
    let g1 = m3 / v.powf(T::lit(1.5));
    let g2 = m4 / (v * v) - three;
    // Bias-corrected skewness and excess kurtosis.
    let skew = g1 * (nf * (nf - one)).sqrt() / (nf - two);
    let kurt = (nf - one) / ((nf - two) * (nf - three)) * ((nf + one) * g2 + T::lit(6.0));
    let correction = three * (nf - one) * (nf - one) / ((nf - two) * (nf - three));
    Ok((skew * skew + one) / (kurt + correction))
}
