//! Fixed points of the generative drift, their stability, and the critical
//! signal levels at which the central fixed point loses stability.

use std::fmt::Write as _;

use crate::dataset::EmpiricalDataset;
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm};
use crate::rng;
use crate::scalar::Real;
use crate::score::ExactScoreModel;

const BISECT_MAX_ITER: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stability {
    Stable,
    Unstable,
    Saddle,
}

impl Stability {
    /// All Hessian eigenvalues positive: stable; all negative: unstable; otherwise saddle.
    pub fn from_eigenvalues<T: Real>(values: &[T]) -> Self {
        if values.iter().all(|&v| v > T::zero()) {
            Stability::Stable
        } else if values.iter().all(|&v| v < T::zero()) {
            Stability::Unstable
        } else {
            Stability::Saddle
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Saddle => "saddle",
        }
    }
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A path of fixed points `x*(theta)` with per-point stability labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointBranch<T> {
    pub label: String,
    pub theta_grid: Vec<T>,
    pub points: Vec<Vec<T>>,
    pub stability: Vec<Stability>,
}

impl<T: Real> FixedPointBranch<T> {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// CSV with header `theta,x_0..x_{D-1},stability`.
    pub fn to_csv_string(&self) -> String {
        let d = self.dim();
        let mut out = String::from("theta");
        for k in 0..d {
            let _ = write!(out, ",x_{k}");
        }
        out.push_str(",stability\n");
        for ((th, x), st) in self.theta_grid.iter().zip(&self.points).zip(&self.stability) {
            let _ = write!(out, "{:.16e}", th.to_f64_lossy());
            for v in x {
                let _ = write!(out, ",{:.16e}", v.to_f64_lossy());
            }
            let _ = writeln!(out, ",{st}");
        }
        out
    }
}

/// `sqrt(sqrt(2) - 1)`: where the origin of the `{-1, +1}` model loses stability.
pub fn critical_theta_1d<T: Real>() -> T {
    (T::SQRT_2() - T::one()).sqrt()
}

/// `sqrt((sqrt(D^2 + r^4) - r^2) / D)`: sign change of the Laplacian at the origin
/// for a centered dataset of radius `r` in `D` dimensions.
pub fn critical_theta_sphere<T: Real>(d: usize, r: T) -> Result<T> {
    if d == 0 {
        return Err(Error::Domain { what: "d", value: 0.0, range: "[1, inf)" });
    }
    if !(r > T::zero()) {
        return Err(Error::Domain { what: "r", value: r.to_f64_lossy(), range: "(0, inf)" });
    }
    let d = T::from_usize(d).unwrap();
    let r2 = r * r;
    Ok((((d * d + r2 * r2).sqrt() - r2) / d).sqrt())
}

/// `sqrt(sqrt(lambda^2 + 1) - lambda)`: where the Gaussian fit of a dataset whose
/// largest covariance eigenvalue is `lambda` first loses stability at its mean.
/// Reduces to [`critical_theta_1d`] for `lambda = 1` and to
/// [`critical_theta_sphere`] for isotropic data with `lambda = r^2 / D`.
pub fn critical_theta_gaussian<T: Real>(lambda: T) -> Result<T> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::Domain { what: "lambda", value: lambda.to_f64_lossy(), range: "(0, inf)" });
    }
    Ok(((lambda * lambda + T::one()).sqrt() - lambda).sqrt())
}

/// [`critical_theta_gaussian`] at the largest eigenvalue of the dataset covariance.
pub fn critical_theta_gaussian_fit<T: Real>(dataset: &EmpiricalDataset<T>) -> Result<T> {
    let values = dataset.covariance().symmetric_eigen().values;
    critical_theta_gaussian(*values.last().expect("nonempty dataset"))
}

/// Bracketed bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<T: Real>(mut f: impl FnMut(T) -> T, mut lo: T, mut hi: T, tol: T) -> Result<T> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == T::zero() {
        return Ok(lo);
    }
    if f_hi == T::zero() {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Precondition(format!(
            "no sign change on [{}, {}]",
            lo.to_f64_lossy(),
            hi.to_f64_lossy()
        )));
    }
    for _ in 0..BISECT_MAX_ITER {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == T::zero() {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / T::lit(2.0))
}

/// Critical signal level of a centered, normalized model, found by bisecting the
/// closed-form Laplacian at the origin over `theta in [lo, hi]`.
pub fn critical_theta_numeric<T: Real>(model: &ExactScoreModel<T>, lo: T, hi: T) -> Result<T> {
    let mut failure = None;
    let root = bisect(
        |th| match model.level_at_theta(th).and_then(|l| model.laplacian_origin_at(&l)) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                T::nan()
            }
        },
        lo,
        hi,
        T::epsilon(),
    );
    match failure {
        Some(e) => Err(e),
        None => root,
    }
}

/// Fixed points of the `{-1, +1}` model at one signal level.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoints1d<T> {
    /// Roots in ascending order.
    pub roots: Vec<(T, Stability)>,
    /// Set when `theta` is within `1e-12` of the critical value.
    pub near_critical: bool,
}

/// `(theta^2 + 1) x - 2 theta tanh(theta x / (1 - theta^2))`; zero at every fixed point.
pub fn self_consistency_residual_1d<T: Real>(theta: T, x: T) -> T {
    let v = T::one() - theta * theta;
    (theta * theta + T::one()) * x - T::lit(2.0) * theta * (theta * x / v).tanh()
}

/// Sign-carrying curvature `u''(x) / beta` of the `{-1, +1}` potential.
fn curvature_1d<T: Real>(theta: T, x: T) -> T {
    let v = T::one() - theta * theta;
    let m = (theta * x / v).tanh();
    let var_w = T::one() - m * m;
    -T::lit(0.5) + T::one() / v - theta * theta * var_w / (v * v)
}

fn label_1d<T: Real>(theta: T, x: T) -> Stability {
    Stability::from_eigenvalues(&[curvature_1d(theta, x)])
}

pub fn fixed_points_1d<T: Real>(theta: T) -> Result<FixedPoints1d<T>> {
    if !(theta > T::zero() && theta < T::one()) {
        return Err(Error::Domain { what: "theta", value: theta.to_f64_lossy(), range: "(0, 1)" });
    }
    let tc = critical_theta_1d::<T>();
    let near_critical = (theta - tc).abs() <= T::lit(1e-12);
    if theta <= tc || near_critical {
        return Ok(FixedPoints1d { roots: vec![(T::zero(), Stability::Stable)], near_critical });
    }
    // The residual is negative on (0, x+) and positive beyond, up to 1.5.
    let mut lo = T::zero();
    let mut hi = T::lit(1.5);
    for _ in 0..BISECT_MAX_ITER {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if self_consistency_residual_1d(theta, mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = lo + (hi - lo) / T::lit(2.0);
    Ok(FixedPoints1d {
        roots: vec![(-x, label_1d(theta, -x)), (T::zero(), label_1d(theta, T::zero())), (x, label_1d(theta, x))],
        near_critical,
    })
}

/// Knobs of the damped fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions<T> {
    /// Step fraction in `(0, 1]`.
    pub damping: T,
    pub max_iter: usize,
    /// Convergence threshold on the self-consistency residual, relative to `max(1, |x|)`.
    pub tolerance: T,
    /// Converged points closer than this are merged.
    pub dedup_distance: T,
}

impl<T: Real> Default for FixedPointOptions<T> {
    fn default() -> Self {
        Self { damping: T::lit(0.5), max_iter: 10_000, tolerance: T::lit(1e-10), dedup_distance: T::lit(1e-6) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint<T> {
    pub x: Vec<T>,
    pub stability: Stability,
    /// Hessian eigenvalues of the potential, ascending.
    pub eigenvalues: Vec<T>,
    /// Norm of `(1 + theta^2) / (2 theta) x - sum_j w_j y_j`.
    pub residual: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure<T> {
    pub seed_index: usize,
    pub last_residual: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSet<T> {
    pub theta: T,
    pub points: Vec<FixedPoint<T>>,
    pub failures: Vec<SeedFailure<T>>,
}

fn self_consistency_residual<T: Real>(model: &ExactScoreModel<T>, x: &[T], level: &crate::schedule::NoiseLevel<T>) -> (T, Vec<T>) {
    let mean = model.posterior_mean(x, level);
    let c = (T::one() + level.theta * level.theta) / (T::lit(2.0) * level.theta);
    let r: Vec<T> = x.iter().zip(&mean).map(|(&xi, &mi)| c * xi - mi).collect();
    (norm(&r), mean)
}

/// Damped iteration `x <- (1 - lambda) x + lambda (2 theta / (1 + theta^2)) E_w[Y](x)`
/// from one seed. Returns the point and its residual, or the last residual on failure.
fn iterate_fixed_point<T: Real>(
    model: &ExactScoreModel<T>,
    level: &crate::schedule::NoiseLevel<T>,
    seed: &[T],
    opts: &FixedPointOptions<T>,
) -> std::result::Result<(Vec<T>, T), T> {
    let gain = T::lit(2.0) * level.theta / (T::one() + level.theta * level.theta);
    let lambda = opts.damping;
    let mut x = seed.to_vec();
    let mut residual = T::infinity();
    for _ in 0..=opts.max_iter {
        let (r, mean) = self_consistency_residual(model, &x, level);
        residual = r;
        if !r.is_finite() {
            return Err(r);
        }
        if r <= opts.tolerance * T::one().max(norm(&x)) {
            return Ok((x, r));
        }
        for (xi, &mi) in x.iter_mut().zip(&mean) {
            *xi = (T::one() - lambda) * *xi + lambda * gain * mi;
        }
    }
    Err(residual)
}

fn classify<T: Real>(model: &ExactScoreModel<T>, x: Vec<T>, residual: T, level: &crate::schedule::NoiseLevel<T>) -> FixedPoint<T> {
    let eigenvalues = model.hessian_at(&x, level).symmetric_eigen().values;
    FixedPoint { stability: Stability::from_eigenvalues(&eigenvalues), x, eigenvalues, residual }
}

/// Default seeds: the origin, every data point scaled by `theta`, and eight
/// random unit directions scaled by `theta * r`.
pub fn default_seeds<T: Real>(model: &ExactScoreModel<T>, theta: T, seed: u64) -> Vec<Vec<T>> {
    let d = model.dim();
    let ds = model.dataset();
    let mut seeds = vec![vec![T::zero(); d]];
    seeds.extend(ds.iter().map(|y| y.iter().map(|&v| theta * v).collect()));
    let r = if ds.radius() > T::zero() {
        ds.radius()
    } else {
        let total: T = ds.iter().map(|y| norm(y)).sum();
        total / T::from_usize(ds.len()).unwrap()
    };
    let mut rng = rng::stream(seed, 0);
    let mut dir = vec![T::zero(); d];
    for _ in 0..8 {
        let len = loop {
            rng::fill_standard_normal(&mut rng, &mut dir);
            let len = norm(&dir);
            if len > T::zero() {
                break len;
            }
        };
        seeds.push(dir.iter().map(|&v| v / len * theta * r).collect());
    }
    seeds
}

/// Solves the generalized self-consistency equation from every seed.
pub fn fixed_points_general<T: Real>(
    model: &ExactScoreModel<T>,
    theta: T,
    seeds: &[Vec<T>],
    opts: &FixedPointOptions<T>,
) -> Result<FixedPointSet<T>> {
    if !model.dataset().is_normalized() {
        return Err(Error::Precondition("general fixed-point solver needs a centered, normalized dataset".into()));
    }
    fixed_points_unchecked(model, theta, seeds, opts)
}

/// Same iteration without the centered/normalized precondition.
pub fn fixed_points_unchecked<T: Real>(
    model: &ExactScoreModel<T>,
    theta: T,
    seeds: &[Vec<T>],
    opts: &FixedPointOptions<T>,
) -> Result<FixedPointSet<T>> {
    if !(theta > T::zero() && theta < T::one()) {
        return Err(Error::Domain { what: "theta", value: theta.to_f64_lossy(), range: "(0, 1)" });
    }
    if !(opts.damping > T::zero() && opts.damping <= T::one()) {
        return Err(Error::Domain { what: "damping", value: opts.damping.to_f64_lossy(), range: "(0, 1]" });
    }
    if let Some(bad) = seeds.iter().find(|s| s.len() != model.dim()) {
        return Err(Error::Shape(format!("seed has {} coordinates, model has {}", bad.len(), model.dim())));
    }
    let level = model.level_at_theta(theta)?;
    let dedup = opts.dedup_distance * opts.dedup_distance;
    let mut points: Vec<FixedPoint<T>> = Vec::new();
    let mut failures = Vec::new();
    for (k, seed) in seeds.iter().enumerate() {
        match iterate_fixed_point(model, &level, seed, opts) {
            Ok((x, residual)) => {
                if points.iter().all(|p| dist_sq(&p.x, &x) >= dedup) {
                    points.push(classify(model, x, residual, &level));
                }
            }
            Err(last_residual) => failures.push(SeedFailure { seed_index: k, last_residual }),
        }
    }
    Ok(FixedPointSet { theta, points, failures })
}

fn check_grid<T: Real>(grid: &[T]) -> Result<()> {
    if grid.iter().any(|&t| !(t > T::zero() && t < T::one())) {
        return Err(Error::Domain { what: "theta grid value", value: f64::NAN, range: "(0, 1)" });
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("theta grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Zero branch over the whole grid plus the two symmetric branches above the
/// critical value, labelled `zero`, `upper`, `lower`.
pub fn bifurcation_diagram_1d<T: Real>(theta_grid: &[T]) -> Result<Vec<FixedPointBranch<T>>> {
    check_grid(theta_grid)?;
    let mut zero = FixedPointBranch { label: "zero".into(), theta_grid: vec![], points: vec![], stability: vec![] };
    let mut upper = FixedPointBranch { label: "upper".into(), ..zero.clone() };
    let mut lower = FixedPointBranch { label: "lower".into(), ..zero.clone() };
    for &theta in theta_grid {
        let fp = fixed_points_1d(theta)?;
        zero.theta_grid.push(theta);
        zero.points.push(vec![T::zero()]);
        zero.stability.push(label_1d(theta, T::zero()));
        if let [(xl, sl), _, (xu, su)] = fp.roots[..] {
            upper.theta_grid.push(theta);
            upper.points.push(vec![xu]);
            upper.stability.push(su);
            lower.theta_grid.push(theta);
            lower.points.push(vec![xl]);
            lower.stability.push(sl);
        }
    }
    Ok(vec![zero, upper, lower])
}

/// Branch continued from `theta * mean(data)` at the first grid value, each
/// solve seeded by the previous solution.
pub fn track_central_branch<T: Real>(
    model: &ExactScoreModel<T>,
    theta_grid: &[T],
    opts: &FixedPointOptions<T>,
) -> Result<FixedPointBranch<T>> {
    check_grid(theta_grid)?;
    let mean = model.dataset().mean();
    let mut branch =
        FixedPointBranch { label: "central".into(), theta_grid: vec![], points: vec![], stability: vec![] };
    let mut x: Vec<T> = mean.iter().map(|&m| theta_grid.first().copied().unwrap_or(T::zero()) * m).collect();
    for &theta in theta_grid {
        let level = model.level_at_theta(theta)?;
        let Ok((next, residual)) = iterate_fixed_point(model, &level, &x, opts) else {
            break;
        };
        let fp = classify(model, next, residual, &level);
        x = fp.x.clone();
        branch.theta_grid.push(theta);
        branch.points.push(fp.x);
        branch.stability.push(fp.stability);
    }
    Ok(branch)
}

/// First signal level at which the continued central fixed point stops being
/// stable. Scans `theta_grid`, then bisects the smallest Hessian eigenvalue.
pub fn central_instability_theta<T: Real>(
    model: &ExactScoreModel<T>,
    theta_grid: &[T],
    opts: &FixedPointOptions<T>,
) -> Result<Option<T>> {
    let branch = track_central_branch(model, theta_grid, opts)?;
    let Some(k) = branch.stability.iter().position(|&s| s != Stability::Stable) else {
        return Ok(None);
    };
    if k == 0 {
        return Ok(Some(branch.theta_grid[0]));
    }
    let seed = branch.points[k - 1].clone();
    let min_eig = |theta: T| -> T {
        let Ok(level) = model.level_at_theta(theta) else { return T::nan() };
        match iterate_fixed_point(model, &level, &seed, opts) {
            Ok((x, _)) => model.hessian_at(&x, &level).symmetric_eigen().values[0],
            Err(_) => T::nan(),
        }
    };
    bisect(min_eig, branch.theta_grid[k - 1], branch.theta_grid[k], T::lit(1e-10)).map(Some)
}

/// Generative drift `-grad u` at each `(x, theta)` grid node.
pub fn drift_field<T: Real>(model: &ExactScoreModel<T>, grid: &[(Vec<T>, T)]) -> Result<Vec<Vec<T>>> {
    grid.iter()
        .map(|(x, theta)| {
            if x.len() != model.dim() {
                return Err(Error::Shape(format!("grid point has {} coordinates", x.len())));
            }
            let level = model.level_at_theta(*theta)?;
            Ok(model.drift_at(x, &level))
        })
        .collect()
}
