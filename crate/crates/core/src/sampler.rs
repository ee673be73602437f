//! Generative samplers over the exact-score model.
//!
//! Chains run from `s_start` down an equally spaced forward-time grid whose last
//! node is replaced by `s_min`; no score is evaluated below `s_min`. Each chain
//! then jumps to the posterior mean `E[Y_0 | x]` at `s_min`. Chain `i` draws
//! from its own stream `(seed, i)`, so output does not depend on thread count.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{mean_and_covariance, Matrix};
use crate::rng::{self, StreamRng};
use crate::scalar::Real;
use crate::schedule::NoiseLevel;
use crate::score::{softmax_into, ExactScoreModel};

pub const DEFAULT_S_MIN: f64 = 1e-4;
const FACTORIZATION_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    /// Euler-Maruyama on the reverse-time SDE.
    StochasticSde,
    /// Discrete DDPM posterior steps with the exact `x_0` prediction.
    AncestralDdpm,
    /// Deterministic DDIM (eta = 0).
    Ddim,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::StochasticSde => "stochastic_sde",
            SamplerKind::AncestralDdpm => "ancestral_ddpm",
            SamplerKind::Ddim => "ddim",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic_sde" => Ok(SamplerKind::StochasticSde),
            "ancestral_ddpm" => Ok(SamplerKind::AncestralDdpm),
            "ddim" => Ok(SamplerKind::Ddim),
            "pndm" => Err(Error::Unsupported("the pndm sampler name is reserved but not implemented".into())),
            other => Err(Error::Unsupported(format!("unknown sampler kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitMode {
    StandardNormal,
    /// Gaussian late start: exact mean and covariance of the noised data at `s_start`.
    Gls,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::StandardNormal => "standard_normal",
            InitMode::Gls => "gls",
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard_normal" => Ok(InitMode::StandardNormal),
            "gls" => Ok(InitMode::Gls),
            other => Err(Error::Unsupported(format!("unknown init mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig<T> {
    pub kind: SamplerKind,
    pub n_steps: usize,
    pub s_start: T,
    pub init: InitMode,
    pub s_min: T,
    pub seed: u64,
    /// Store every intermediate state, not only the finals.
    pub keep_trajectories: bool,
}

impl<T: Real> SamplerConfig<T> {
    pub fn new(kind: SamplerKind, n_steps: usize, s_start: T) -> Self {
        Self {
            kind,
            n_steps,
            s_start,
            init: InitMode::StandardNormal,
            s_min: T::lit(DEFAULT_S_MIN),
            seed: 0,
            keep_trajectories: false,
        }
    }

    pub fn with_init(mut self, init: InitMode) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trajectories(mut self, keep: bool) -> Self {
        self.keep_trajectories = keep;
        self
    }

    pub fn with_s_min(mut self, s_min: T) -> Self {
        self.s_min = s_min;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Domain { what: "n_steps", value: 0.0, range: "[1, inf)" });
        }
        if !(self.s_min > T::zero()) {
            return Err(Error::Domain { what: "s_min", value: self.s_min.to_f64_lossy(), range: "(0, s_start)" });
        }
        if !(self.s_start > self.s_min && self.s_start <= T::one()) {
            return Err(Error::Domain { what: "s_start", value: self.s_start.to_f64_lossy(), range: "(s_min, 1]" });
        }
        Ok(())
    }

    /// Forward times visited by the chain: `n_steps + 1` nodes from `s_start`,
    /// with every node below `s_min` (including the terminal 0) moved to `s_min`.
    pub fn time_grid(&self, model: &ExactScoreModel<T>) -> Result<Vec<T>> {
        self.validate()?;
        let mut grid = model.schedule().discrete_grid(self.n_steps, self.s_start)?;
        grid.iter_mut().for_each(|s| *s = s.max(self.s_min));
        Ok(grid)
    }
}

/// A Gaussian initialization law with cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInit<T> {
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    pub cholesky: Matrix<T>,
    /// Whether `1e-10 I` had to be added before factorization succeeded.
    pub jittered: bool,
}

impl<T: Real> GaussianInit<T> {
    pub fn standard_normal(dim: usize) -> Self {
        Self { mean: vec![T::zero(); dim], covariance: Matrix::identity(dim), cholesky: Matrix::identity(dim), jittered: false }
    }

    pub fn from_moments(mean: Vec<T>, mut covariance: Matrix<T>) -> Result<Self> {
        let d = mean.len();
        if covariance.rows() != d || covariance.cols() != d {
            return Err(Error::Shape(format!("covariance is {}x{}, mean has {d} entries", covariance.rows(), covariance.cols())));
        }
        let scale = covariance.as_slice().iter().fold(T::one(), |m, v| m.max(v.abs()));
        if covariance.max_abs_asymmetry() > T::lit(1e-12) * scale {
            return Err(Error::Precondition("covariance is not symmetric".into()));
        }
        covariance.symmetrize();
        if let Some(cholesky) = covariance.cholesky() {
            return Ok(Self { mean, covariance, cholesky, jittered: false });
        }
        let jitter = T::lit(FACTORIZATION_JITTER);
        let bumped = covariance.add(&Matrix::identity(d).scaled(jitter));
        match bumped.cholesky() {
            Some(cholesky) => Ok(Self { mean, covariance: bumped, cholesky, jittered: true }),
            None => Err(Error::Factorization { jitter: FACTORIZATION_JITTER }),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Draws `mean + L z` into `out`, using `z` as scratch.
    pub fn sample_into(&self, rng: &mut StreamRng, z: &mut [T], out: &mut [T]) {
        rng::fill_standard_normal(rng, z);
        let d = self.dim();
        for i in 0..d {
            let row = self.cholesky.row(i);
            let mut v = self.mean[i];
            for j in 0..=i {
                v = v + row[j] * z[j];
            }
            out[i] = v;
        }
    }
}

/// Exact moments of the noised dataset at `s_start`:
/// `theta mean(data)` and `theta^2 Cov(data) + (1 - theta^2) I`.
pub fn gls_init<T: Real>(model: &ExactScoreModel<T>, s_start: T) -> Result<GaussianInit<T>> {
    if !(s_start > T::zero() && s_start <= T::one()) {
        return Err(Error::Domain { what: "s_start", value: s_start.to_f64_lossy(), range: "(0, 1]" });
    }
    let level = model.level(s_start)?;
    let (mean, cov) = model.marginal_moments(&level);
    GaussianInit::from_moments(mean, cov)
}

/// Empirical moments of `draws` forward-noised samples; for validating [`gls_init`].
pub fn gls_init_monte_carlo<T: Real>(
    model: &ExactScoreModel<T>,
    s_start: T,
    draws: usize,
    seed: u64,
) -> Result<GaussianInit<T>> {
    if draws < 2 {
        return Err(Error::Arity("Monte Carlo moments need at least two draws".into()));
    }
    let level = model.level(s_start)?;
    let samples = model.sample_forward(&level, draws, seed);
    let (mean, cov) = mean_and_covariance(&samples, model.dim());
    GaussianInit::from_moments(mean, cov)
}

/// Output of one batch of chains.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerRun<T> {
    pub config: SamplerConfig<T>,
    pub dim: usize,
    /// Forward times of the stored states, `n_steps + 1` entries.
    pub grid: Vec<T>,
    /// `S x D` posterior-mean samples, row-major.
    pub finals: Vec<T>,
    /// `S x (n_steps + 1) x D` states when requested.
    pub trajectories: Option<Vec<T>>,
}

impl<T: Real> SamplerRun<T> {
    pub fn batch(&self) -> usize {
        self.finals.len() / self.dim.max(1)
    }

    pub fn n_states(&self) -> usize {
        self.grid.len()
    }

    pub fn final_point(&self, i: usize) -> &[T] {
        &self.finals[i * self.dim..(i + 1) * self.dim]
    }

    pub fn finals_iter(&self) -> impl Iterator<Item = &[T]> {
        self.finals.chunks_exact(self.dim)
    }

    /// State of chain `chain` at grid node `step`.
    pub fn state(&self, chain: usize, step: usize) -> Option<&[T]> {
        let traj = self.trajectories.as_ref()?;
        let stride = self.n_states() * self.dim;
        let start = chain * stride + step * self.dim;
        traj.get(start..start + self.dim)
    }

    /// All chains' states at one grid node, row-major `S x D`.
    pub fn states_at(&self, step: usize) -> Option<Vec<T>> {
        (0..self.batch()).map(|c| self.state(c, step).map(<[T]>::to_vec)).collect::<Option<Vec<_>>>().map(|v| v.concat())
    }

    /// Headerless CSV, one final sample per row.
    pub fn finals_csv(&self) -> String {
        let mut out = String::new();
        for p in self.finals_iter() {
            write_row(&mut out, p);
        }
        out
    }

    /// CSV with header `chain,step,s,x_0..x_{D-1}`.
    pub fn trajectories_csv(&self) -> Option<String> {
        self.trajectories.as_ref()?;
        let mut out = String::from("chain,step,s");
        for k in 0..self.dim {
            let _ = write!(out, ",x_{k}");
        }
        out.push('\n');
        for c in 0..self.batch() {
            for (step, s) in self.grid.iter().enumerate() {
                let _ = write!(out, "{c},{step},{:.16e},", s.to_f64_lossy());
                write_row(&mut out, self.state(c, step)?);
            }
        }
        Some(out)
    }
}

pub(crate) fn write_row<T: Real>(out: &mut String, values: &[T]) {
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{:.16e}", v.to_f64_lossy());
    }
    out.push('\n');
}

/// Per-chain scratch buffers so steps do not allocate.
struct Workspace<T> {
    exponents: Vec<T>,
    weights: Vec<T>,
    mean: Vec<T>,
    z: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new(n: usize, d: usize) -> Self {
        Self { exponents: Vec::with_capacity(n), weights: Vec::with_capacity(n), mean: vec![T::zero(); d], z: vec![T::zero(); d] }
    }

    /// Fills `self.mean` with the posterior mean `E[Y_0 | x]` at `level`.
    fn posterior_mean(&mut self, model: &ExactScoreModel<T>, x: &[T], level: &NoiseLevel<T>) {
        model.exponents_into(x, level, &mut self.exponents);
        softmax_into(&self.exponents, &mut self.weights);
        self.mean.iter_mut().for_each(|m| *m = T::zero());
        for (y, &w) in model.dataset().iter().zip(&self.weights) {
            if w == T::zero() {
                continue;
            }
            for (m, &yi) in self.mean.iter_mut().zip(y) {
                *m = *m + w * yi;
            }
        }
    }
}

fn step<T: Real>(
    model: &ExactScoreModel<T>,
    kind: SamplerKind,
    from: &NoiseLevel<T>,
    to: &NoiseLevel<T>,
    x: &mut [T],
    ws: &mut Workspace<T>,
    rng: &mut StreamRng,
) {
    if from.s == to.s {
        return;
    }
    ws.posterior_mean(model, x, from);
    let (th, thp) = (from.theta, to.theta);
    let v = from.variance();
    match kind {
        SamplerKind::StochasticSde => {
            // dx = beta (score + x/2) ds + sqrt(beta ds) z, integrated towards smaller s.
            let ds = from.s - to.s;
            let noise = (from.beta * ds).sqrt();
            rng::fill_standard_normal(rng, &mut ws.z);
            for ((xi, &mi), &zi) in x.iter_mut().zip(&ws.mean).zip(&ws.z) {
                let score = (th * mi - *xi) / v;
                *xi = *xi + from.beta * (score + T::lit(0.5) * *xi) * ds + noise * zi;
            }
        }
        SamplerKind::AncestralDdpm => {
            let ab = th * th;
            let abp = thp * thp;
            let alpha = ab / abp;
            let b = T::one() - alpha;
            let c0 = abp.sqrt() * b / (T::one() - ab);
            let ct = alpha.sqrt() * (T::one() - abp) / (T::one() - ab);
            let sd = ((T::one() - abp) / (T::one() - ab) * b).max(T::zero()).sqrt();
            rng::fill_standard_normal(rng, &mut ws.z);
            for ((xi, &mi), &zi) in x.iter_mut().zip(&ws.mean).zip(&ws.z) {
                *xi = c0 * mi + ct * *xi + sd * zi;
            }
        }
        SamplerKind::Ddim => {
            // eps = (x - theta x0) / sqrt(1 - theta^2); x' = theta' x0 + sqrt(1 - theta'^2) eps.
            let sv = v.sqrt();
            let svp = to.variance().sqrt();
            for (xi, &mi) in x.iter_mut().zip(&ws.mean) {
                let eps = (*xi - th * mi) / sv;
                *xi = thp * mi + svp * eps;
            }
        }
    }
}

/// Runs one chain from `init`, recording states into `traj` when given.
fn run_chain<T: Real>(
    model: &ExactScoreModel<T>,
    kind: SamplerKind,
    levels: &[NoiseLevel<T>],
    mut x: Vec<T>,
    rng: &mut StreamRng,
    mut traj: Option<&mut Vec<T>>,
) -> Result<Vec<T>> {
    let d = model.dim();
    let mut ws = Workspace::new(model.dataset().len(), d);
    if let Some(t) = traj.as_deref_mut() {
        t.extend_from_slice(&x);
    }
    for (k, pair) in levels.windows(2).enumerate() {
        step(model, kind, &pair[0], &pair[1], &mut x, &mut ws, rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: k + 1 });
        }
        if let Some(t) = traj.as_deref_mut() {
            t.extend_from_slice(&x);
        }
    }
    let last = levels.last().expect("grid has at least two nodes");
    ws.posterior_mean(model, &x, last);
    Ok(ws.mean.clone())
}

fn init_law<T: Real>(model: &ExactScoreModel<T>, config: &SamplerConfig<T>) -> Result<GaussianInit<T>> {
    match config.init {
        InitMode::StandardNormal => Ok(GaussianInit::standard_normal(model.dim())),
        InitMode::Gls => gls_init(model, config.s_start),
    }
}

fn levels_for<T: Real>(model: &ExactScoreModel<T>, config: &SamplerConfig<T>) -> Result<(Vec<T>, Vec<NoiseLevel<T>>)> {
    let grid = config.time_grid(model)?;
    let levels = grid.iter().map(|&s| model.level(s)).collect::<Result<Vec<_>>>()?;
    Ok((grid, levels))
}

fn run_batch<T: Real>(
    model: &ExactScoreModel<T>,
    config: &SamplerConfig<T>,
    inits: Option<&[T]>,
    batch: usize,
) -> Result<SamplerRun<T>> {
    if batch == 0 {
        return Err(Error::Arity("batch size must be at least 1".into()));
    }
    let d = model.dim();
    let (grid, levels) = levels_for(model, config)?;
    let law = init_law(model, config)?;
    let keep = config.keep_trajectories;
    let n_states = levels.len();
    let per_chain: Vec<(Vec<T>, Vec<T>)> = (0..batch)
        .into_par_iter()
        .map(|chain| {
            let mut rng = rng::stream(config.seed, chain as u64);
            let x = match inits {
                Some(all) => all[chain * d..(chain + 1) * d].to_vec(),
                None => {
                    let mut x = vec![T::zero(); d];
                    let mut z = vec![T::zero(); d];
                    law.sample_into(&mut rng, &mut z, &mut x);
                    x
                }
            };
            let mut traj = keep.then(|| Vec::with_capacity(n_states * d));
            let fin = run_chain(model, config.kind, &levels, x, &mut rng, traj.as_mut())?;
            Ok((fin, traj.unwrap_or_default()))
        })
        .collect::<Result<_>>()?;
    let mut finals = Vec::with_capacity(batch * d);
    let mut trajectories = keep.then(|| Vec::with_capacity(batch * n_states * d));
    for (fin, traj) in per_chain {
        finals.extend(fin);
        if let Some(t) = trajectories.as_mut() {
            t.extend(traj);
        }
    }
    Ok(SamplerRun { config: *config, dim: d, grid, finals, trajectories })
}

/// Stochastic sampler (`stochastic_sde` or `ancestral_ddpm`).
pub fn sample_stochastic<T: Real>(model: &ExactScoreModel<T>, config: &SamplerConfig<T>, batch: usize) -> Result<SamplerRun<T>> {
    if config.kind == SamplerKind::Ddim {
        return Err(Error::Precondition("sample_stochastic called with the ddim kind".into()));
    }
    run_batch(model, config, None, batch)
}

/// Deterministic DDIM sampler; the initialization draw is its only randomness.
pub fn sample_ddim<T: Real>(model: &ExactScoreModel<T>, config: &SamplerConfig<T>, batch: usize) -> Result<SamplerRun<T>> {
    if config.kind != SamplerKind::Ddim {
        return Err(Error::Precondition("sample_ddim called with a stochastic kind".into()));
    }
    run_batch(model, config, None, batch)
}

/// Dispatches on `config.kind`.
pub fn sample<T: Real>(model: &ExactScoreModel<T>, config: &SamplerConfig<T>, batch: usize) -> Result<SamplerRun<T>> {
    run_batch(model, config, None, batch)
}

/// Runs chains from caller-supplied initial states (row-major `S x D`).
pub fn sample_from<T: Real>(model: &ExactScoreModel<T>, config: &SamplerConfig<T>, inits: &[T]) -> Result<SamplerRun<T>> {
    let d = model.dim();
    if inits.is_empty() || inits.len() % d != 0 {
        return Err(Error::Shape(format!("{} initial coordinates do not form {d}-vectors", inits.len())));
    }
    run_batch(model, config, Some(inits), inits.len() / d)
}

/// How many denoising steps a sweep uses at each start time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// The same step count at every start time (fast samplers).
    Fixed(usize),
    /// `round(per_unit * s_start)` steps, at least one, keeping the step size fixed.
    PerUnitTime(usize),
}

impl StepPolicy {
    pub fn steps_for<T: Real>(self, s_start: T) -> usize {
        match self {
            StepPolicy::Fixed(n) => n,
            StepPolicy::PerUnitTime(n) => {
                let steps = (T::from_usize(n).unwrap() * s_start).round().to_usize().unwrap_or(1);
                steps.max(1)
            }
        }
    }
}

/// A late-start experiment: one sampler family over a grid of start times.
#[derive(Debug, Clone)]
pub struct SweepSpec<T> {
    pub label: String,
    pub kind: SamplerKind,
    pub init: InitMode,
    pub steps: StepPolicy,
    pub s_grid: Vec<T>,
    pub repeats: usize,
    pub batch: usize,
    pub seed: u64,
    pub s_min: T,
}

/// Seed of repeat `r`; shared across start times so curves use common random numbers.
pub fn repeat_seed(seed: u64, repeat: usize) -> u64 {
    seed.wrapping_add((repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Metric values of a sweep, `values[repeat][grid index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable<T> {
    pub label: String,
    pub s_grid: Vec<T>,
    pub values: Vec<Vec<T>>,
}

impl<T: Real> SweepTable<T> {
    pub fn column(&self, k: usize) -> Vec<T> {
        self.values.iter().map(|row| row[k]).collect()
    }

    pub fn mean(&self, k: usize) -> T {
        let col = self.column(k);
        col.iter().copied().sum::<T>() / T::from_usize(col.len()).unwrap()
    }

    /// Sample standard deviation over repeats (zero for a single repeat).
    pub fn std(&self, k: usize) -> T {
        let col = self.column(k);
        if col.len() < 2 {
            return T::zero();
        }
        let m = self.mean(k);
        let ss: T = col.iter().map(|&v| (v - m) * (v - m)).sum();
        (ss / T::from_usize(col.len() - 1).unwrap()).sqrt()
    }

    pub fn means(&self) -> Vec<T> {
        (0..self.s_grid.len()).map(|k| self.mean(k)).collect()
    }

    /// Table layout: header `dataset,stat,<s_start...>`, one mean row and one std row.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("dataset,stat");
        for s in &self.s_grid {
            let _ = write!(out, ",s_start={}", s.to_f64_lossy());
        }
        out.push('\n');
        for (stat, f) in [("mean", Self::mean as fn(&Self, usize) -> T), ("std", Self::std)] {
            let _ = write!(out, "{},{stat}", self.label);
            for k in 0..self.s_grid.len() {
                let _ = write!(out, ",{:.16e}", f(self, k).to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the sampler at every start time and repeat, scoring each run with `metric`.
pub fn late_start_sweep<T: Real>(
    model: &ExactScoreModel<T>,
    spec: &SweepSpec<T>,
    metric: impl Fn(&SamplerRun<T>) -> Result<T>,
) -> Result<SweepTable<T>> {
    if spec.s_grid.is_empty() || spec.s_grid.iter().any(|&s| !(s > T::zero() && s <= T::one())) {
        return Err(Error::Domain { what: "s_start grid", value: f64::NAN, range: "(0, 1]" });
    }
    if spec.repeats == 0 {
        return Err(Error::Arity("sweep needs at least one repeat".into()));
    }
    let mut values = Vec::with_capacity(spec.repeats);
    for r in 0..spec.repeats {
        let mut row = Vec::with_capacity(spec.s_grid.len());
        for &s_start in &spec.s_grid {
            let config = SamplerConfig {
                kind: spec.kind,
                n_steps: spec.steps.steps_for(s_start),
                s_start,
                init: spec.init,
                s_min: spec.s_min,
                seed: repeat_seed(spec.seed, r),
                keep_trajectories: false,
            };
            row.push(metric(&sample(model, &config, spec.batch)?)?);
        }
        values.push(row);
    }
    Ok(SweepTable { label: spec.label.clone(), s_grid: spec.s_grid.clone(), values })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knee<T> {
    pub s_start: T,
    /// Discrete second derivative of the metric at the knee.
    pub curvature: T,
    /// Set when the curve has essentially no positive curvature.
    pub low_confidence: bool,
}

/// Grid point maximizing the discrete second derivative of `metric(s_start)`.
///
/// Points are sorted by `s_start`; ties go to the larger start time (the plateau side).
pub fn estimate_knee<T: Real>(s_grid: &[T], metric: &[T]) -> Result<Knee<T>> {
    if s_grid.len() != metric.len() {
        return Err(Error::Shape("grid and metric lengths differ".into()));
    }
    if s_grid.len() < 5 {
        return Err(Error::Arity(format!("knee estimation needs at least 5 points, got {}", s_grid.len())));
    }
    let mut pts: Vec<(T, T)> = s_grid.iter().copied().zip(metric.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Precondition("start times must be distinct".into()));
    }
    let two = T::lit(2.0);
    let mut best: Option<(usize, T)> = None;
    for i in (1..pts.len() - 1).rev() {
        let (s0, f0) = pts[i - 1];
        let (s1, f1) = pts[i];
        let (s2, f2) = pts[i + 1];
        let (h1, h2) = (s1 - s0, s2 - s1);
        let curv = two * ((f2 - f1) / h2 - (f1 - f0) / h1) / (h1 + h2);
        // Scanning from the plateau side, a later point must beat the best by a
        // relative margin so rounding noise cannot break exact ties.
        if best.is_none_or(|(_, b)| curv > b + T::lit(1e-9) * b.abs()) {
            best = Some((i, curv));
        }
    }
    let (i, curvature) = best.expect("at least three points");
    let range = pts.iter().fold(T::zero(), |m, p| m.max(p.1.abs()));
    let span = pts[pts.len() - 1].0 - pts[0].0;
    let low_confidence = !(curvature > T::lit(1e-9) * (range / (span * span)).max(T::min_positive_value()));
    Ok(Knee { s_start: pts[i].0, curvature, low_confidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EmpiricalDataset;
    use crate::schedule::VpSchedule;

    type Model = ExactScoreModel<f64>;

    fn two_point() -> Model {
        Model::new(EmpiricalDataset::two_point_1d(), VpSchedule::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        let c = SamplerConfig::<f64>::new(SamplerKind::Ddim, 0, 1.0);
        assert!(c.validate().is_err());
        let c = SamplerConfig::<f64>::new(SamplerKind::Ddim, 5, 1e-5);
        assert!(c.validate().is_err());
        let c = SamplerConfig::<f64>::new(SamplerKind::Ddim, 5, 1.5);
        assert!(c.validate().is_err());
        assert!(sample(&two_point(), &SamplerConfig::new(SamplerKind::Ddim, 5, 1.0), 0).is_err());
    }

    #[test]
    fn grid_ends_at_s_min_and_never_goes_below() {
        let m = two_point();
        let c = SamplerConfig::<f64>::new(SamplerKind::StochasticSde, 4, 0.8);
        let g = c.time_grid(&m).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.8);
        assert_eq!(*g.last().unwrap(), 1e-4);
        let fine = SamplerConfig::<f64>::new(SamplerKind::Ddim, 1000, 0.05).time_grid(&m).unwrap();
        assert!(fine.iter().all(|&s| s >= 1e-4));
    }

    #[test]
    fn gls_at_full_horizon_is_near_standard() {
        let ds = EmpiricalDataset::hypersphere(3, 3f64.sqrt(), 50, 1).unwrap().center_and_normalize(3f64.sqrt()).unwrap();
        let m = Model::new(ds, VpSchedule::default()).unwrap();
        let g = gls_init(&m, 1.0).unwrap();
        assert!(g.mean.iter().all(|v| v.abs() < 1e-4));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.covariance.get(i, j) - want).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn gls_two_point_is_variance_preserving() {
        let m = two_point();
        for s in [0.05, 0.3, 0.7, 1.0] {
            let g = gls_init(&m, s).unwrap();
            assert_eq!(g.mean, vec![0.0]);
            assert!((g.covariance.get(0, 0) - 1.0).abs() < 1e-15);
        }
        assert!(gls_init(&m, 0.0).is_err());
    }

    #[test]
    fn from_moments_rejects_asymmetric_and_indefinite() {
        let asym = Matrix::from_row_major(2, 2, vec![1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianInit::from_moments(vec![0.0, 0.0], asym).is_err());
        let indef = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GaussianInit::from_moments(vec![0.0, 0.0], indef), Err(Error::Factorization { .. })));
        let singular = Matrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        assert!(GaussianInit::from_moments(vec![0.0, 0.0], singular).unwrap().jittered);
    }

    #[test]
    fn same_seed_same_finals() {
        let m = two_point();
        for kind in [SamplerKind::StochasticSde, SamplerKind::AncestralDdpm, SamplerKind::Ddim] {
            let c = SamplerConfig::new(kind, 20, 1.0).with_seed(5);
            let a = sample(&m, &c, 64).unwrap();
            let b = sample(&m, &c, 64).unwrap();
            assert_eq!(a.finals, b.finals);
            let other = sample(&m, &c.with_seed(6), 64).unwrap();
            assert_ne!(a.finals, other.finals);
        }
    }

    #[test]
    fn kind_guards() {
        let m = two_point();
        assert!(sample_stochastic(&m, &SamplerConfig::new(SamplerKind::Ddim, 3, 1.0), 2).is_err());
        assert!(sample_ddim(&m, &SamplerConfig::new(SamplerKind::StochasticSde, 3, 1.0), 2).is_err());
    }

    #[test]
    fn ddim_single_step_recovers_separated_point() {
        // Points 10 apart; at s = 0.3 the kernel sd is ~0.75, so the posterior is one-hot.
        let ds = EmpiricalDataset::from_rows(&[vec![5.0, 0.0], vec![-5.0, 0.0]]).unwrap();
        let m = Model::new(ds, VpSchedule::default()).unwrap();
        let c = SamplerConfig::new(SamplerKind::Ddim, 1, 0.3);
        let th = m.level(0.3).unwrap().theta;
        let run = sample_from(&m, &c, &[5.0 * th, 0.0, -5.0 * th, 0.0]).unwrap();
        assert!((run.final_point(0)[0] - 5.0).abs() < 1e-9);
        assert!((run.final_point(1)[0] + 5.0).abs() < 1e-9);
    }

    #[test]
    fn trajectories_have_expected_shape() {
        let m = two_point();
        let c = SamplerConfig::new(SamplerKind::StochasticSde, 7, 0.9).with_trajectories(true);
        let run = sample(&m, &c, 3).unwrap();
        assert_eq!(run.trajectories.as_ref().unwrap().len(), 3 * 8);
        assert_eq!(run.n_states(), 8);
        let csv = run.trajectories_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 * 8);
        assert!(csv.starts_with("chain,step,s,x_0\n"));
    }

    #[test]
    fn names_round_trip() {
        for kind in [SamplerKind::StochasticSde, SamplerKind::AncestralDdpm, SamplerKind::Ddim] {
            assert_eq!(kind.as_str().parse::<SamplerKind>().unwrap(), kind);
        }
        assert!(matches!("pndm".parse::<SamplerKind>(), Err(Error::Unsupported(_))));
        assert_eq!("gls".parse::<InitMode>().unwrap(), InitMode::Gls);
        assert!("uniform".parse::<InitMode>().is_err());
    }

    #[test]
    fn step_policy() {
        assert_eq!(StepPolicy::Fixed(5).steps_for(0.3), 5);
        assert_eq!(StepPolicy::PerUnitTime(1000).steps_for(0.3), 300);
        assert_eq!(StepPolicy::PerUnitTime(10).steps_for(0.01), 1);
    }

    #[test]
    fn knee_of_constructed_curves() {
        let grid: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        // Flat for s >= 0.5, linear rise below: the kink is the only curvature.
        let kinked: Vec<f64> = grid.iter().map(|&s| (0.5 - s).max(0.0)).collect();
        let k = estimate_knee(&grid, &kinked).unwrap();
        assert!((k.s_start - 0.5).abs() < 1e-12);
        assert!(!k.low_confidence);
        // Flat then quadratic: curvature is constant inside the quadratic part, so
        // the knee lands within one cell of the join on the quadratic side.
        let quad: Vec<f64> = grid.iter().map(|&s| (0.5 - s).max(0.0).powi(2)).collect();
        let k = estimate_knee(&grid, &quad).unwrap();
        assert!((k.s_start - 0.4).abs() < 1e-12);
        let linear: Vec<f64> = grid.iter().map(|&s| 3.0 - 2.0 * s).collect();
        let k = estimate_knee(&grid, &linear).unwrap();
        assert!(k.low_confidence);
        assert!(k.s_start > 0.1 && k.s_start < 1.0);
        assert!(matches!(estimate_knee(&grid[..4], &linear[..4]), Err(Error::Arity(_))));
    }

    #[test]
    fn sweep_table_layout() {
        let t = SweepTable { label: "toy".into(), s_grid: vec![0.5, 1.0], values: vec![vec![1.0, 2.0], vec![3.0, 2.0]] };
        assert_eq!(t.means(), vec![2.0, 2.0]);
        assert!((t.std(0) - 2f64.sqrt()).abs() < 1e-15);
        let csv = t.to_csv_string();
        assert!(csv.starts_with("dataset,stat,s_start=0.5,s_start=1\ntoy,mean,"));
    }
}
