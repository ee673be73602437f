//! Closed-form density, score, potential and curvature of a finite dataset
//! pushed through the variance-preserving kernel.
//!
//! The marginal at forward time `s` is the mixture
//! `(1/N) sum_j Normal(x; theta y_j, (1 - theta^2) I)`. All mixture sums go
//! through a max-shifted log-sum-exp because the exponents reach `+-1e4` as
//! `theta -> 1`.
//!
//! Potential convention: `u(x, t) = beta * (-|x|^2 / 4 - logsumexp_j e_j)` with
//! `e_j = -|x - theta y_j|^2 / (2 (1 - theta^2))`, evaluated at `s = 1 - t`. The
//! mixture weight `1/N` and the Gaussian normalizer are dropped, so only
//! differences and derivatives of `u` are meaningful. Its negative gradient is
//! the generative drift `beta * (score + x / 2)`.

use crate::dataset::EmpiricalDataset;
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, Matrix};
use crate::rng;
use crate::scalar::Real;
use crate::schedule::{NoiseLevel, VpSchedule};

#[derive(Debug, Clone)]
pub struct ExactScoreModel<T> {
    dataset: EmpiricalDataset<T>,
    schedule: VpSchedule<T>,
}

/// Density, score and posterior weights at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval<T> {
    pub log_density: T,
    pub score: Vec<T>,
    pub weights: Vec<T>,
}

/// Posterior weights together with the log-sum-exp of their exponents.
#[derive(Debug, Clone)]
pub struct Posterior<T> {
    pub weights: Vec<T>,
    pub log_sum_exp: T,
}

/// Numerically stable `log sum exp(v)`.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// Normalized softmax of `values`, written into `out`; returns the log-sum-exp.
pub fn softmax_into<T: Real>(values: &[T], out: &mut Vec<T>) -> T {
    let max = values.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    out.clear();
    out.extend(values.iter().map(|&v| (v - max).exp()));
    let total: T = out.iter().copied().sum();
    let inv = T::one() / total;
    out.iter_mut().for_each(|w| *w = *w * inv);
    max + total.ln()
}

impl<T: Real> ExactScoreModel<T> {
    pub fn new(dataset: EmpiricalDataset<T>, schedule: VpSchedule<T>) -> Result<Self> {
        dataset.validate()?;
        Ok(Self { dataset, schedule })
    }

    pub fn dataset(&self) -> &EmpiricalDataset<T> {
        &self.dataset
    }

    pub fn schedule(&self) -> &VpSchedule<T> {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    /// Level at forward time `s`, rejecting the atomic limit `s = 0`.
    pub fn level(&self, s: T) -> Result<NoiseLevel<T>> {
        if s == T::zero() {
            return Err(Error::DegenerateTime { s: 0.0 });
        }
        self.schedule.level(s)
    }

    /// Level at generative time `t`, i.e. forward time `1 - t`.
    pub fn generative_level(&self, t: T) -> Result<NoiseLevel<T>> {
        self.level(T::one() - t)
    }

    pub fn level_at_theta(&self, theta: T) -> Result<NoiseLevel<T>> {
        if theta >= T::one() {
            return Err(Error::DegenerateTime { s: 0.0 });
        }
        self.schedule.level_at_theta(theta)
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("point has {} coordinates, model has {}", x.len(), self.dim())));
        }
        Ok(())
    }

    /// Mixture exponents `e_j` written into `out`.
    pub fn exponents_into(&self, x: &[T], level: &NoiseLevel<T>, out: &mut Vec<T>) {
        let scale = -T::one() / (T::lit(2.0) * level.variance());
        let theta = level.theta;
        out.clear();
        out.extend(self.dataset.iter().map(|y| {
            let d: T = x.iter().zip(y).map(|(&xi, &yi)| (xi - theta * yi) * (xi - theta * yi)).sum();
            d * scale
        }));
    }

    pub fn posterior(&self, x: &[T], level: &NoiseLevel<T>) -> Posterior<T> {
        let mut e = Vec::with_capacity(self.dataset.len());
        self.exponents_into(x, level, &mut e);
        let mut weights = Vec::with_capacity(e.len());
        let log_sum_exp = softmax_into(&e, &mut weights);
        Posterior { weights, log_sum_exp }
    }

    /// `sum_j w_j y_j` for precomputed weights.
    pub fn weighted_data_mean(&self, weights: &[T]) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim()];
        for (y, &w) in self.dataset.iter().zip(weights) {
            for (mi, &yi) in m.iter_mut().zip(y) {
                *mi = *mi + w * yi;
            }
        }
        m
    }

    /// Posterior mean `E[Y_0 | X_s = x]`.
    pub fn posterior_mean(&self, x: &[T], level: &NoiseLevel<T>) -> Vec<T> {
        self.weighted_data_mean(&self.posterior(x, level).weights)
    }

    fn log_normalizer(&self, level: &NoiseLevel<T>) -> T {
        let n = T::from_usize(self.dataset.len()).unwrap();
        let d = T::from_usize(self.dim()).unwrap();
        -n.ln() - T::lit(0.5) * d * (T::lit(2.0) * T::PI() * level.variance()).ln()
    }

    pub fn mixture_logpdf(&self, x: &[T], s: T) -> Result<T> {
        self.check_point(x)?;
        let level = self.level(s)?;
        Ok(self.mixture_logpdf_at(x, &level))
    }

    pub fn mixture_logpdf_at(&self, x: &[T], level: &NoiseLevel<T>) -> T {
        let mut e = Vec::with_capacity(self.dataset.len());
        self.exponents_into(x, level, &mut e);
        log_sum_exp(&e) + self.log_normalizer(level)
    }

    pub fn score(&self, x: &[T], s: T) -> Result<ScoreEval<T>> {
        self.check_point(x)?;
        let level = self.level(s)?;
        Ok(self.score_at(x, &level))
    }

    pub fn score_at(&self, x: &[T], level: &NoiseLevel<T>) -> ScoreEval<T> {
        let post = self.posterior(x, level);
        let score = self.score_from_weights(x, level, &post.weights);
        ScoreEval { log_density: post.log_sum_exp + self.log_normalizer(level), score, weights: post.weights }
    }

    /// `sum_j w_j (theta y_j - x) / (1 - theta^2)`.
    pub fn score_from_weights(&self, x: &[T], level: &NoiseLevel<T>, weights: &[T]) -> Vec<T> {
        let mean = self.weighted_data_mean(weights);
        let inv_var = T::one() / level.variance();
        x.iter().zip(&mean).map(|(&xi, &mi)| (level.theta * mi - xi) * inv_var).collect()
    }

    /// Potential at generative time `t`.
    pub fn potential(&self, x: &[T], t: T) -> Result<T> {
        self.check_point(x)?;
        let level = self.generative_level(t)?;
        Ok(self.potential_at(x, &level))
    }

    pub fn potential_at(&self, x: &[T], level: &NoiseLevel<T>) -> T {
        let mut e = Vec::with_capacity(self.dataset.len());
        self.exponents_into(x, level, &mut e);
        level.beta * (-T::lit(0.25) * dot(x, x) - log_sum_exp(&e))
    }

    pub fn potential_gradient(&self, x: &[T], t: T) -> Result<Vec<T>> {
        self.check_point(x)?;
        let level = self.generative_level(t)?;
        Ok(self.potential_gradient_at(x, &level))
    }

    /// `grad u = -beta * (score + x / 2)`.
    pub fn potential_gradient_at(&self, x: &[T], level: &NoiseLevel<T>) -> Vec<T> {
        self.drift_at(x, level).into_iter().map(|v| -v).collect()
    }

    /// Generative drift `-grad u = beta * (score + x / 2)`.
    pub fn drift_at(&self, x: &[T], level: &NoiseLevel<T>) -> Vec<T> {
        let post = self.posterior(x, level);
        let score = self.score_from_weights(x, level, &post.weights);
        let half = T::lit(0.5);
        score.iter().zip(x).map(|(&sc, &xi)| level.beta * (sc + half * xi)).collect()
    }

    pub fn hessian(&self, x: &[T], t: T) -> Result<Matrix<T>> {
        self.check_point(x)?;
        let level = self.generative_level(t)?;
        Ok(self.hessian_at(x, &level))
    }

    /// Hessian of the potential through the posterior-covariance identity
    /// `beta * ((1/(1-theta^2) - 1/2) I - Cov_w[theta Y] / (1-theta^2)^2)`.
    pub fn hessian_at(&self, x: &[T], level: &NoiseLevel<T>) -> Matrix<T> {
        let d = self.dim();
        let post = self.posterior(x, level);
        let mean = self.weighted_data_mean(&post.weights);
        let theta2 = level.theta * level.theta;
        let mut cov = Matrix::zeros(d, d);
        for (y, &w) in self.dataset.iter().zip(&post.weights) {
            if w == T::zero() {
                continue;
            }
            for i in 0..d {
                let di = y[i] - mean[i];
                for j in 0..=i {
                    let v = cov.get(i, j) + w * di * (y[j] - mean[j]);
                    cov.set(i, j, v);
                }
            }
        }
        let v = level.variance();
        let diag = T::one() / v - T::lit(0.5);
        let k = theta2 / (v * v);
        let mut h = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let mut e = -k * cov.get(i, j);
                if i == j {
                    e = e + diag;
                }
                h.set(i, j, level.beta * e);
                h.set(j, i, level.beta * e);
            }
        }
        h
    }

    fn is_two_point_1d(&self) -> bool {
        let p = self.dataset.points();
        self.dim() == 1 && p.len() == 2 && p[0] == -p[1] && p[0].abs() == T::one()
    }

    /// `d^2 u / dx^2` at the origin for the `{-1, +1}` dataset, in closed form.
    pub fn second_derivative_origin_1d(&self, t: T) -> Result<T> {
        let level = self.generative_level(t)?;
        self.second_derivative_origin_1d_at(&level)
    }

    pub fn second_derivative_origin_1d_at(&self, level: &NoiseLevel<T>) -> Result<T> {
        if !self.is_two_point_1d() {
            return Err(Error::Shape("closed-form second derivative needs the {-1, +1} dataset".into()));
        }
        Ok(second_derivative_origin_1d_closed_form(level))
    }

    /// Laplacian of the potential at the origin for a centered, radius-`r` dataset.
    pub fn laplacian_origin(&self, t: T) -> Result<T> {
        let level = self.generative_level(t)?;
        self.laplacian_origin_at(&level)
    }

    pub fn laplacian_origin_at(&self, level: &NoiseLevel<T>) -> Result<T> {
        if !self.dataset.is_normalized() {
            return Err(Error::Precondition("Laplacian closed form needs a centered, normalized dataset".into()));
        }
        Ok(laplacian_origin_closed_form(self.dim(), self.dataset.radius(), level))
    }

    /// Exact mean and covariance of the noised data at forward time `s`.
    pub fn marginal_moments(&self, level: &NoiseLevel<T>) -> (Vec<T>, Matrix<T>) {
        let theta = level.theta;
        let mean = self.dataset.mean().into_iter().map(|m| theta * m).collect();
        let cov = self
            .dataset
            .covariance()
            .scaled(theta * theta)
            .add(&Matrix::identity(self.dim()).scaled(level.variance()));
        (mean, cov)
    }

    /// Draws `count` points from the forward marginal: a uniform data point, then the kernel.
    pub fn sample_forward(&self, level: &NoiseLevel<T>, count: usize, seed: u64) -> Vec<T> {
        use rand::Rng;
        let mut rng = rng::stream(seed, 0);
        let sd = level.variance().sqrt();
        let n = self.dataset.len();
        let mut out = Vec::with_capacity(count * self.dim());
        for _ in 0..count {
            let j = rng.random_range(0..n);
            for &y in self.dataset.point(j) {
                out.push(level.theta * y + sd * rng::standard_normal::<T>(&mut rng));
            }
        }
        out
    }

    /// Index of the data point nearest to `x`.
    pub fn nearest_point(&self, x: &[T]) -> usize {
        let mut best = (0, T::infinity());
        for (j, y) in self.dataset.iter().enumerate() {
            let d = dist_sq(x, y);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }
}

/// `-beta (1/2 + (2 theta^2 - 1) / (theta^2 - 1)^2)`.
pub fn second_derivative_origin_1d_closed_form<T: Real>(level: &NoiseLevel<T>) -> T {
    let t2 = level.theta * level.theta;
    let denom = (t2 - T::one()) * (t2 - T::one());
    -level.beta * (T::lit(0.5) + (T::lit(2.0) * t2 - T::one()) / denom)
}

/// `-beta (D/2 + ((D + r^2) theta^2 - D) / (theta^2 - 1)^2)`.
pub fn laplacian_origin_closed_form<T: Real>(dim: usize, radius: T, level: &NoiseLevel<T>) -> T {
    let d = T::from_usize(dim).unwrap();
    let t2 = level.theta * level.theta;
    let denom = (t2 - T::one()) * (t2 - T::one());
    -level.beta * (d / T::lit(2.0) + ((d + radius * radius) * t2 - d) / denom)
}
