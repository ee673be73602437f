//! Command-line experiments: one TOML config in, CSV tables and JSON summaries out.
//!
//! Every command writes into the output directory together with `manifest.json`
//! (config echo, config hash, seed, version, wall time). Exit codes: 0 success,
//! 2 configuration or input error, 3 numerical failure, 1 anything else.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{self, frechet_gaussian, mode_entropy};
use crate::bifurcation::{self, FixedPointOptions};
use crate::dataset::EmpiricalDataset;
use crate::error::Error;
use crate::sampler::{self, InitMode, SamplerConfig, SamplerKind, StepPolicy, SweepSpec};
use crate::schedule::VpSchedule;
use crate::score::ExactScoreModel;

#[derive(Debug, Parser)]
#[command(name = "ssbdiff", version, about = "Exact-score diffusion experiments: bifurcations, samplers, scans")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Experiment seed (overrides `seed`).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Fixed-point branches and critical signal levels.
    Bifurcate,
    /// Run the configured sampler once.
    Sample,
    /// Late-start sweep of the Fréchet metric over start times.
    Sweep,
    /// Potential along interpolation paths between two sampled trajectories.
    Scan,
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum DatasetAction {
    /// Write the configured dataset as CSV.
    Generate,
    /// Center and project the configured dataset onto `dataset.radius`.
    Normalize,
    /// Print summary statistics as JSON.
    Inspect,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bifurcate => "bifurcate",
            Command::Sample => "sample",
            Command::Sweep => "sweep",
            Command::Scan => "scan",
            Command::Dataset { action: DatasetAction::Generate } => "dataset generate",
            Command::Dataset { action: DatasetAction::Normalize } => "dataset normalize",
            Command::Dataset { action: DatasetAction::Inspect } => "dataset inspect",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } | CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io { .. } => "io",
            CliError::Other(_) => "internal",
        }
    }

    /// Single-line summary for stderr.
    pub fn summary(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error kind={} code={} message={:?}", self.kind(), self.exit_code(), msg.trim())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            e if e.is_numerical() => CliError::Numerical(e),
            Error::Io(source) => CliError::Io { path: PathBuf::new(), source },
            other => CliError::Config(other.to_string()),
        }
    }
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

/// Start time as a discrete step `0..=N` or a continuous time in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartTime {
    Step(i64),
    Time(f64),
}

impl StartTime {
    /// Canonical forward time; steps are divided by the schedule's step count.
    pub fn resolve(self, n_steps: usize, field: &str) -> Result<f64, CliError> {
        let s = match self {
            StartTime::Step(k) => {
                if k < 0 || k as usize > n_steps {
                    return Err(config_err(field, format!("step {k} outside 0..={n_steps}")));
                }
                k as f64 / n_steps as f64
            }
            StartTime::Time(s) => s,
        };
        if !(s > 0.0 && s <= 1.0) {
            return Err(config_err(field, format!("start time {s} outside (0, 1]")));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub schedule: ScheduleSection,
    pub sampler: SamplerSection,
    pub sweep: SweepSection,
    pub bifurcate: BifurcateSection,
    pub scan: ScanSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            schedule: ScheduleSection::default(),
            sampler: SamplerSection::default(),
            sweep: SweepSection::default(),
            bifurcate: BifurcateSection::default(),
            scan: ScanSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// `two_point`, `hypersphere`, `gaussian_mixture`, or `csv`.
    pub kind: String,
    /// Row label in sweep tables; defaults to `kind`.
    pub name: Option<String>,
    pub dim: usize,
    pub radius: f64,
    pub count: usize,
    pub centers: Vec<Vec<f64>>,
    pub std: f64,
    pub per_mode: usize,
    pub path: Option<PathBuf>,
    /// Zero-pad the data into this many dimensions.
    pub embed: Option<usize>,
    /// Center and project onto `radius` before use.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: "two_point".into(),
            name: None,
            dim: 2,
            radius: 1.0,
            count: 64,
            centers: Vec::new(),
            std: 0.1,
            per_mode: 50,
            path: None,
            embed: None,
            normalize: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub beta_min: f64,
    pub beta_max: f64,
    pub n_steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { beta_min: 0.1, beta_max: 20.0, n_steps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub kind: String,
    pub n_steps: usize,
    pub s_start: StartTime,
    pub init: String,
    pub s_min: f64,
    pub batch: usize,
    pub trajectories: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kind: "stochastic_sde".into(),
            n_steps: 1000,
            s_start: StartTime::Time(1.0),
            init: "standard_normal".into(),
            s_min: sampler::DEFAULT_S_MIN,
            batch: 1000,
            trajectories: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub s_grid: Vec<StartTime>,
    pub repeats: usize,
    /// Sampler kinds; defaults to `sampler.kind`.
    pub kinds: Option<Vec<String>>,
    /// Step counts; defaults to `sampler.n_steps`.
    pub n_steps: Option<Vec<usize>>,
    /// Init modes; defaults to `sampler.init`.
    pub inits: Option<Vec<String>>,
    /// `fixed`: `n` steps at every start; `per_unit`: `round(n * s_start)` steps.
    pub step_policy: String,
    /// Chains per run; defaults to `sampler.batch`.
    pub batch: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            s_grid: (1..=10).map(|k| StartTime::Time(k as f64 / 10.0)).collect(),
            repeats: 5,
            kinds: None,
            n_steps: None,
            inits: None,
            step_policy: "fixed".into(),
            batch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcateSection {
    pub theta_min: f64,
    pub theta_max: f64,
    pub points: usize,
}

impl Default for BifurcateSection {
    fn default() -> Self {
        Self { theta_min: 0.05, theta_max: 0.999, points: 191 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    /// Signal levels at which to scan; mapped to the nearest stored sampler step.
    pub thetas: Vec<f64>,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_points: usize,
    pub window: usize,
    pub batch: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            thetas: vec![0.2, 0.4, 0.55, 0.96, 0.98, 0.99],
            alpha_min: -PI / 5.0,
            alpha_max: 0.7 * PI,
            alpha_points: analysis::DEFAULT_ALPHA_POINTS,
            window: analysis::DEFAULT_MINIMA_WINDOW,
            batch: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn schedule(&self) -> Result<VpSchedule<f64>, CliError> {
        let s = &self.schedule;
        VpSchedule::new(s.beta_min, s.beta_max, s.n_steps).map_err(|e| config_err("schedule", e))
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig<f64>, CliError> {
        let s = &self.sampler;
        let kind: SamplerKind = s.kind.parse().map_err(|e| config_err("sampler.kind", e))?;
        let init: InitMode = s.init.parse().map_err(|e| config_err("sampler.init", e))?;
        if s.n_steps == 0 {
            return Err(config_err("sampler.n_steps", "must be at least 1"));
        }
        if s.batch == 0 {
            return Err(config_err("sampler.batch", "must be at least 1"));
        }
        if !(s.s_min > 0.0) {
            return Err(config_err("sampler.s_min", format!("must be positive, got {}", s.s_min)));
        }
        let s_start = s.s_start.resolve(self.schedule.n_steps, "sampler.s_start")?;
        if s_start <= s.s_min {
            return Err(config_err("sampler.s_start", format!("must exceed s_min = {}", s.s_min)));
        }
        Ok(SamplerConfig { kind, n_steps: s.n_steps, s_start, init, s_min: s.s_min, seed: self.seed, keep_trajectories: s.trajectories })
    }

    /// Checks every section, naming the first offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.dataset;
        if !(d.radius > 0.0) {
            return Err(config_err("dataset.radius", format!("must be positive, got {}", d.radius)));
        }
        match d.kind.as_str() {
            "two_point" => {}
            "hypersphere" => {
                if d.dim == 0 {
                    return Err(config_err("dataset.dim", "must be at least 1"));
                }
                if d.count == 0 {
                    return Err(config_err("dataset.count", "must be at least 1"));
                }
            }
            "gaussian_mixture" => {
                if d.centers.is_empty() {
                    return Err(config_err("dataset.centers", "needs at least one center"));
                }
                if d.centers.iter().any(|c| c.is_empty() || c.len() != d.centers[0].len()) {
                    return Err(config_err("dataset.centers", "centers must be non-empty and of equal length"));
                }
                if !(d.std >= 0.0) {
                    return Err(config_err("dataset.std", format!("must be nonnegative, got {}", d.std)));
                }
                if d.per_mode == 0 {
                    return Err(config_err("dataset.per_mode", "must be at least 1"));
                }
            }
            "csv" => {
                if d.path.is_none() {
                    return Err(config_err("dataset.path", "required for csv datasets"));
                }
            }
            other => return Err(config_err("dataset.kind", format!("unknown dataset kind `{other}`"))),
        }
        if d.embed == Some(0) {
            return Err(config_err("dataset.embed", "must be at least 1"));
        }
        self.schedule()?;
        self.sampler_config()?;
        let w = &self.sweep;
        if w.s_grid.is_empty() {
            return Err(config_err("sweep.s_grid", "needs at least one start time"));
        }
        for (i, s) in w.s_grid.iter().enumerate() {
            s.resolve(self.schedule.n_steps, &format!("sweep.s_grid[{i}]"))?;
        }
        if w.repeats == 0 {
            return Err(config_err("sweep.repeats", "must be at least 1"));
        }
        if w.batch == Some(0) {
            return Err(config_err("sweep.batch", "must be at least 1"));
        }
        for (i, k) in w.kinds.iter().flatten().enumerate() {
            k.parse::<SamplerKind>().map_err(|e| config_err(&format!("sweep.kinds[{i}]"), e))?;
        }
        for (i, k) in w.inits.iter().flatten().enumerate() {
            k.parse::<InitMode>().map_err(|e| config_err(&format!("sweep.inits[{i}]"), e))?;
        }
        if w.n_steps.iter().flatten().any(|&n| n == 0) {
            return Err(config_err("sweep.n_steps", "every step count must be at least 1"));
        }
        if !matches!(w.step_policy.as_str(), "fixed" | "per_unit") {
            return Err(config_err("sweep.step_policy", format!("expected `fixed` or `per_unit`, got `{}`", w.step_policy)));
        }
        let b = &self.bifurcate;
        if !(b.theta_min > 0.0 && b.theta_min < b.theta_max && b.theta_max < 1.0) {
            return Err(config_err("bifurcate", "need 0 < theta_min < theta_max < 1"));
        }
        if b.points < 2 {
            return Err(config_err("bifurcate.points", "must be at least 2"));
        }
        let sc = &self.scan;
        if sc.thetas.is_empty() || sc.thetas.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(config_err("scan.thetas", "need at least one value in (0, 1)"));
        }
        if sc.alpha_points < 5 {
            return Err(config_err("scan.alpha_points", "must be at least 5"));
        }
        if !(sc.alpha_max > sc.alpha_min) {
            return Err(config_err("scan.alpha_max", "must exceed alpha_min"));
        }
        if sc.window == 0 {
            return Err(config_err("scan.window", "must be at least 1"));
        }
        if sc.batch < 2 {
            return Err(config_err("scan.batch", "must be at least 2"));
        }
        Ok(())
    }

    pub fn dataset_label(&self) -> String {
        self.dataset.name.clone().unwrap_or_else(|| self.dataset.kind.clone())
    }

    /// Builds the dataset, then applies `embed` and `normalize`.
    pub fn build_dataset(&self) -> Result<EmpiricalDataset<f64>, CliError> {
        let d = &self.dataset;
        let mut ds = match d.kind.as_str() {
            "two_point" => EmpiricalDataset::two_point_1d(),
            "hypersphere" => EmpiricalDataset::hypersphere(d.dim, d.radius, d.count, d.seed)?,
            "gaussian_mixture" => EmpiricalDataset::gaussian_mixture(&d.centers, d.std, d.per_mode, d.seed)?,
            "csv" => {
                let path = d.path.as_ref().expect("validated");
                EmpiricalDataset::load_csv(path).map_err(|e| match e {
                    Error::Io(source) => CliError::Io { path: path.clone(), source },
                    other => config_err("dataset.path", format!("{}: {other}", path.display())),
                })?
            }
            other => return Err(config_err("dataset.kind", format!("unknown dataset kind `{other}`"))),
        };
        if let Some(dim) = d.embed {
            ds = ds.embed(dim).map_err(|e| config_err("dataset.embed", e))?;
        }
        if d.normalize {
            ds = ds.center_and_normalize(d.radius)?;
        }
        Ok(ds)
    }

    pub fn build_model(&self) -> Result<ExactScoreModel<f64>, CliError> {
        Ok(ExactScoreModel::new(self.build_dataset()?, self.schedule()?)?)
    }
}

/// Files written by one command, in write order.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("json serializes");
        self.write(name, &(text + "\n"))
    }
}

/// Parses arguments, resolves the config, and runs the command on a sized thread pool.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.global.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let threads = match cli.global.threads {
        Some(0) => return Err(config_err("--threads", "must be at least 1")),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    pool.install(|| execute(cli.command, &cfg, threads))
}

fn execute(command: Command, cfg: &ExperimentConfig, threads: usize) -> Result<(), CliError> {
    let started = Instant::now();
    let mut out = Outputs::new(&cfg.output_dir)?;
    let summary = match command {
        Command::Bifurcate => cmd_bifurcate(cfg, &mut out)?,
        Command::Sample => cmd_sample(cfg, &mut out)?,
        Command::Sweep => cmd_sweep(cfg, &mut out)?,
        Command::Scan => cmd_scan(cfg, &mut out)?,
        Command::Dataset { action } => cmd_dataset(cfg, action, &mut out)?,
    };
    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "threads": threads,
        "config_sha256": cfg.hash(),
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "outputs": out.files.clone(),
        "summary": summary,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
    });
    out.write_json("manifest.json", &manifest)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    analysis::alpha_grid(lo, hi, n)
}

fn opt_json(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

fn cmd_bifurcate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let model = cfg.build_model()?;
    let ds = model.dataset();
    let b = &cfg.bifurcate;
    let grid = linspace(b.theta_min, b.theta_max, b.points);
    let is_two_point = ds.dim() == 1 && ds.len() == 2 && {
        let mut p = ds.points().to_vec();
        p.sort_by(f64::total_cmp);
        p == [-1.0, 1.0]
    };
    let opts = FixedPointOptions::default();
    if is_two_point {
        for branch in bifurcation::bifurcation_diagram_1d(&grid)? {
            out.write(&format!("branch_{}.csv", branch.label), &branch.to_csv_string())?;
        }
    } else {
        let central = bifurcation::track_central_branch(&model, &grid, &opts)?;
        out.write("branch_central.csv", &central.to_csv_string())?;
        let mut csv = String::from("theta");
        for k in 0..ds.dim() {
            csv.push_str(&format!(",x_{k}"));
        }
        csv.push_str(",stability\n");
        for &theta in &grid {
            let seeds = bifurcation::default_seeds(&model, theta, cfg.seed);
            let set = bifurcation::fixed_points_unchecked(&model, theta, &seeds, &opts)?;
            for p in &set.points {
                csv.push_str(&format!("{theta:.16e}"));
                for v in &p.x {
                    csv.push_str(&format!(",{v:.16e}"));
                }
                csv.push_str(&format!(",{}\n", p.stability));
            }
        }
        out.write("fixed_points.csv", &csv)?;
    }
    let schedule = model.schedule();
    let theta_c = bifurcation::critical_theta_1d::<f64>();
    let sphere = if ds.is_normalized() || cfg.dataset.kind == "hypersphere" {
        Some(bifurcation::critical_theta_sphere(ds.dim(), ds.radius())?)
    } else {
        None
    };
    let laplacian = if ds.is_normalized() {
        bifurcation::critical_theta_numeric(&model, b.theta_min, b.theta_max).ok()
    } else {
        None
    };
    let gaussian = bifurcation::critical_theta_gaussian_fit(ds).ok();
    let central = bifurcation::central_instability_theta(&model, &grid, &opts)?;
    let knee = fs::read_to_string(out.dir.join("knee.json")).ok().and_then(|t| serde_json::from_str::<Value>(&t).ok());
    let s_of = |t: Option<f64>| opt_json(t.and_then(|t| schedule.invert_theta(t).ok()));
    let critical = json!({
        "theta_c_1d": theta_c,
        "s_c_1d": schedule.invert_theta(theta_c)?,
        "theta_star_sphere": opt_json(sphere),
        "s_star_sphere": s_of(sphere),
        "theta_laplacian_numeric": opt_json(laplacian),
        "theta_gaussian_fit": opt_json(gaussian),
        "s_gaussian_fit": s_of(gaussian),
        "theta_central_instability": opt_json(central),
        "knee_estimate": knee.unwrap_or(Value::Null),
    });
    out.write_json("critical.json", &critical)?;
    Ok(critical)
}

fn quality(reference: &EmpiricalDataset<f64>, run: &sampler::SamplerRun<f64>) -> Result<Value, CliError> {
    let report = frechet_gaussian(reference.points(), &run.finals, reference.dim());
    let centers: Vec<Vec<f64>> = reference.iter().map(<[f64]>::to_vec).collect();
    let entropy = mode_entropy(&run.finals, reference.dim(), &centers)?;
    Ok(json!({
        "batch": run.batch(),
        "frechet": report.as_ref().ok().map(|r| r.frechet),
        "frechet_jittered": report.as_ref().ok().map(|r| r.jittered),
        "nearest_point_entropy": entropy,
    }))
}

fn cmd_sample(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let model = cfg.build_model()?;
    let config = cfg.sampler_config()?;
    let run = sampler::sample(&model, &config, cfg.sampler.batch)?;
    out.write("finals.csv", &run.finals_csv())?;
    if let Some(csv) = run.trajectories_csv() {
        out.write("trajectories.csv", &csv)?;
    }
    let mut summary = quality(model.dataset(), &run)?;
    summary["s_start"] = json!(config.s_start);
    summary["kind"] = json!(config.kind.as_str());
    summary["init"] = json!(config.init.as_str());
    Ok(summary)
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let model = cfg.build_model()?;
    let base = cfg.sampler_config()?;
    let w = &cfg.sweep;
    let n = cfg.schedule.n_steps;
    let s_grid = w.s_grid.iter().enumerate().map(|(i, s)| s.resolve(n, &format!("sweep.s_grid[{i}]"))).collect::<Result<Vec<_>, _>>()?;
    let kinds: Vec<SamplerKind> = match &w.kinds {
        Some(list) => list.iter().map(|k| k.parse()).collect::<Result<_, _>>()?,
        None => vec![base.kind],
    };
    let inits: Vec<InitMode> = match &w.inits {
        Some(list) => list.iter().map(|k| k.parse()).collect::<Result<_, _>>()?,
        None => vec![base.init],
    };
    let steps = w.n_steps.clone().unwrap_or_else(|| vec![base.n_steps]);
    let reference = model.dataset().points().to_vec();
    let dim = model.dim();
    let mut knees = BTreeMap::new();
    for &kind in &kinds {
        for &n_steps in &steps {
            for &init in &inits {
                let policy = if w.step_policy == "per_unit" { StepPolicy::PerUnitTime(n_steps) } else { StepPolicy::Fixed(n_steps) };
                let spec = SweepSpec {
                    label: cfg.dataset_label(),
                    kind,
                    init,
                    steps: policy,
                    s_grid: s_grid.clone(),
                    repeats: w.repeats,
                    batch: w.batch.unwrap_or(cfg.sampler.batch),
                    seed: cfg.seed,
                    s_min: base.s_min,
                };
                let table = sampler::late_start_sweep(&model, &spec, |run| Ok(frechet_gaussian(&reference, &run.finals, dim)?.frechet))?;
                let name = format!("{}_n{n_steps}_{}", kind.as_str(), init.as_str());
                out.write(&format!("sweep_{name}.csv"), &table.to_csv_string())?;
                let knee = match sampler::estimate_knee(&s_grid, &table.means()) {
                    Ok(k) => json!({
                        "available": true,
                        "s_start": k.s_start,
                        "curvature": k.curvature,
                        "low_confidence": k.low_confidence,
                    }),
                    Err(e) => json!({ "available": false, "reason": e.to_string() }),
                };
                knees.insert(name, knee);
            }
        }
    }
    let knees = serde_json::to_value(knees).expect("json");
    out.write_json("knee.json", &knees)?;
    Ok(knees)
}

fn cmd_scan(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value, CliError> {
    let model = cfg.build_model()?;
    let sc = &cfg.scan;
    let config = cfg.sampler_config()?.with_trajectories(true);
    let run = sampler::sample(&model, &config, sc.batch)?;
    let mode = |c: usize| model.nearest_point(run.final_point(c));
    let a = 0;
    let b = (1..run.batch()).find(|&c| mode(c) != mode(a)).unwrap_or(1);
    let mut steps = Vec::with_capacity(sc.thetas.len());
    for &theta in &sc.thetas {
        let s = model.schedule().invert_theta(theta)?;
        let k = (0..run.n_states())
            .min_by(|&i, &j| (run.grid[i] - s).abs().total_cmp(&(run.grid[j] - s).abs()))
            .expect("grid is nonempty");
        steps.push(k);
    }
    let times: Vec<f64> = steps.iter().map(|&k| 1.0 - run.grid[k]).collect();
    let state = |c: usize, k: usize| run.state(c, k).expect("trajectories stored").to_vec();
    let x1: Vec<Vec<f64>> = steps.iter().map(|&k| state(a, k)).collect();
    let x2: Vec<Vec<f64>> = steps.iter().map(|&k| state(b, k)).collect();
    let alphas = analysis::alpha_grid(sc.alpha_min, sc.alpha_max, sc.alpha_points);
    let scan = analysis::potential_scan(&model, &x1, &x2, &alphas, &times)?;
    out.write("scan.csv", &scan.to_csv_string(sc.window))?;
    let thetas: Vec<f64> = steps.iter().map(|&k| model.level(run.grid[k]).map(|l| l.theta)).collect::<Result<_, _>>()?;
    Ok(json!({
        "chains": [a, b],
        "thetas": thetas,
        "times": times,
        "minima": scan.minima_counts(sc.window),
    }))
}

fn cmd_dataset(cfg: &ExperimentConfig, action: DatasetAction, out: &mut Outputs) -> Result<Value, CliError> {
    let ds = cfg.build_dataset()?;
    match action {
        DatasetAction::Generate => {
            out.write("dataset.csv", &ds.to_csv_string())?;
            Ok(json!({ "points": ds.len(), "dim": ds.dim() }))
        }
        DatasetAction::Normalize => {
            let normalized = ds.center_and_normalize(cfg.dataset.radius)?;
            out.write("dataset.csv", &normalized.to_csv_string())?;
            Ok(json!({
                "points": normalized.len(),
                "dim": normalized.dim(),
                "radius": cfg.dataset.radius,
                "centering_residual": normalized.centering_residual(),
            }))
        }
        DatasetAction::Inspect => {
            let norms: Vec<f64> = ds.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            let cov = ds.covariance();
            let rows: Vec<Vec<f64>> = (0..cov.rows()).map(|i| cov.row(i).to_vec()).collect();
            let info = json!({
                "points": ds.len(),
                "dim": ds.dim(),
                "mean": ds.mean(),
                "covariance": rows,
                "norm_min": norms.iter().copied().fold(f64::INFINITY, f64::min),
                "norm_max": norms.iter().copied().fold(0.0, f64::max),
                "centering_residual": ds.centering_residual(),
                "normalized": ds.is_normalized(),
                "theta_gaussian_fit": opt_json(bifurcation::critical_theta_gaussian_fit(&ds).ok()),
            });
            println!("{}", serde_json::to_string(&info).expect("json"));
            out.write_json("inspect.json", &info)?;
            Ok(info)
        }
    }
}
