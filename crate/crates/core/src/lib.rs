//! Generative diffusion over finite datasets with analytically exact scores.
//!
//! The crate covers the variance-preserving schedule, closed-form scores and
//! potentials of empirical datasets, fixed-point and bifurcation analysis of the
//! generative drift, stochastic and deterministic samplers with late-start and
//! Gaussian late-start initialization, and desk-scale quality and diversity
//! metrics. All numerics are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar type for everyday use.

pub mod analysis;
pub mod bifurcation;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod score;

pub use error::{Error, Result};
pub use scalar::Real;

pub type VpSchedule = schedule::VpSchedule<f64>;
pub type EmpiricalDataset = dataset::EmpiricalDataset<f64>;
pub type ExactScoreModel = score::ExactScoreModel<f64>;
pub type FixedPointBranch = bifurcation::FixedPointBranch<f64>;
pub type SamplerConfig = sampler::SamplerConfig<f64>;
pub type SamplerRun = sampler::SamplerRun<f64>;
pub type GaussianInit = sampler::GaussianInit<f64>;
pub type PotentialScan = analysis::PotentialScan<f64>;
pub type Matrix = linalg::Matrix<f64>;

pub type VpScheduleF32 = schedule::VpSchedule<f32>;
pub type EmpiricalDatasetF32 = dataset::EmpiricalDataset<f32>;
pub type ExactScoreModelF32 = score::ExactScoreModel<f32>;
pub type SamplerRunF32 = sampler::SamplerRun<f32>;
