//! Linear variance-preserving noise schedule.
//!
//! Forward time `s` runs over `[0, 1]`; generative time is `t = 1 - s`. The
//! signal coefficient `theta(s) = exp(-1/2 * int_0^s beta)` has the closed form
//! `exp(-s^2 (beta_max - beta_min) / 4 - s beta_min / 2)`, which is used
//! everywhere instead of quadrature.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Continuous horizon. The discrete step count is only a view onto `[0, 1]`.
pub const HORIZON: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpSchedule<T> {
    beta_min: T,
    beta_max: T,
    n_steps: usize,
}

/// The schedule evaluated at one forward time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel<T> {
    pub s: T,
    pub theta: T,
    pub beta: T,
}

impl<T: Real> NoiseLevel<T> {
    /// Kernel variance `1 - theta^2`.
    #[inline]
    pub fn variance(&self) -> T {
        T::one() - self.theta * self.theta
    }
}

impl<T: Real> Default for VpSchedule<T> {
    fn default() -> Self {
        Self { beta_min: T::lit(0.1), beta_max: T::lit(20.0), n_steps: 1000 }
    }
}

impl<T: Real> VpSchedule<T> {
    pub fn new(beta_min: T, beta_max: T, n_steps: usize) -> Result<Self> {
        if !(beta_min > T::zero()) || !beta_min.is_finite() {
            return Err(Error::Domain { what: "beta_min", value: beta_min.to_f64_lossy(), range: "(0, inf)" });
        }
        if !(beta_max >= beta_min) || !beta_max.is_finite() {
            return Err(Error::Domain { what: "beta_max", value: beta_max.to_f64_lossy(), range: "[beta_min, inf)" });
        }
        if n_steps < 2 {
            return Err(Error::Domain { what: "n_steps", value: n_steps as f64, range: "[2, inf)" });
        }
        Ok(Self { beta_min, beta_max, n_steps })
    }

    pub fn beta_min(&self) -> T {
        self.beta_min
    }

    pub fn beta_max(&self) -> T {
        self.beta_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn check_s(s: T) -> Result<()> {
        if s >= T::zero() && s <= T::one() {
            Ok(())
        } else {
            Err(Error::Domain { what: "s", value: s.to_f64_lossy(), range: "[0, 1]" })
        }
    }

    pub fn beta_at(&self, s: T) -> Result<T> {
        Self::check_s(s)?;
        Ok(self.beta_unchecked(s))
    }

    pub fn theta_at(&self, s: T) -> Result<T> {
        Self::check_s(s)?;
        Ok(self.theta_unchecked(s))
    }

    #[inline]
    pub(crate) fn beta_unchecked(&self, s: T) -> T {
        self.beta_min + s * (self.beta_max - self.beta_min)
    }

    /// `-ln theta(s)`, the integrated half-rate.
    #[inline]
    pub(crate) fn half_integral(&self, s: T) -> T {
        T::lit(0.25) * s * s * (self.beta_max - self.beta_min) + T::lit(0.5) * s * self.beta_min
    }

    #[inline]
    pub(crate) fn theta_unchecked(&self, s: T) -> T {
        (-self.half_integral(s)).exp()
    }

    /// Smallest attainable signal coefficient, `theta(1)`.
    pub fn theta_floor(&self) -> T {
        self.theta_unchecked(T::one())
    }

    /// Forward time at which `theta(s) = theta`, from the quadratic exponent.
    pub fn invert_theta(&self, theta: T) -> Result<T> {
        let floor = self.theta_floor();
        if !(theta >= floor && theta <= T::one()) {
            return Err(Error::Domain { what: "theta", value: theta.to_f64_lossy(), range: "[theta(1), 1]" });
        }
        // a s^2 + b s = L  with  L = -ln theta >= 0.
        let a = T::lit(0.25) * (self.beta_max - self.beta_min);
        let b = T::lit(0.5) * self.beta_min;
        let l = -theta.ln();
        if l <= T::zero() {
            return Ok(T::zero());
        }
        // Rationalized root avoids cancellation for small L; a = 0 reduces to L / b.
        let s = T::lit(2.0) * l / (b + (b * b + T::lit(4.0) * a * l).sqrt());
        Ok(s.min(T::one()))
    }

    pub fn level(&self, s: T) -> Result<NoiseLevel<T>> {
        Self::check_s(s)?;
        Ok(NoiseLevel { s, theta: self.theta_unchecked(s), beta: self.beta_unchecked(s) })
    }

    /// Level at which the signal coefficient equals `theta` (theta itself is kept exact).
    pub fn level_at_theta(&self, theta: T) -> Result<NoiseLevel<T>> {
        let s = self.invert_theta(theta)?;
        Ok(NoiseLevel { s, theta, beta: self.beta_unchecked(s) })
    }

    /// Level at generative time `t = 1 - s`.
    pub fn level_at_generative(&self, t: T) -> Result<NoiseLevel<T>> {
        self.level(T::lit(HORIZON) - t)
    }

    /// `n_sub + 1` equally spaced forward times from `s_start` down to 0, endpoints included.
    pub fn discrete_grid(&self, n_sub: usize, s_start: T) -> Result<Vec<T>> {
        if n_sub == 0 {
            return Err(Error::Domain { what: "n_sub", value: 0.0, range: "[1, inf)" });
        }
        if !(s_start > T::zero() && s_start <= T::one()) {
            return Err(Error::Domain { what: "s_start", value: s_start.to_f64_lossy(), range: "(0, 1]" });
        }
        let n = T::from_usize(n_sub).unwrap();
        Ok((0..=n_sub)
            .map(|i| {
                if i == n_sub {
                    T::zero()
                } else {
                    s_start * (n - T::from_usize(i).unwrap()) / n
                }
            })
            .collect())
    }

    /// Converts a discrete step index on the `n_steps` grid to forward time.
    pub fn step_to_time(&self, step: usize) -> Result<T> {
        if step > self.n_steps {
            return Err(Error::Domain { what: "step", value: step as f64, range: "[0, n_steps]" });
        }
        Ok(T::from_usize(step).unwrap() / T::from_usize(self.n_steps).unwrap())
    }
}
