//! Configuration, input loading and subcommand drivers for the `sphereot` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sphereot::bench::{run_bench, write_bench_csv, BenchGrid, BenchMethod};
use sphereot::evolution::{run_evolution, write_evolution_csv, EvolveConfig};
use sphereot::flows::{run_flow, write_metrics_ndjson, write_trajectory_csv, FlowConfig, FlowTarget, MetricRow};
use sphereot::rng::{derive_seed, rng_from_seed};
use sphereot::sliced::{dssw_hat, ssw_hat, sw_hat, DistanceReport, Method, SlicedConfig};
use sphereot::sphere::{icosahedron_mixture, sample_uniform_sphere, sample_vmf, UnitVector, VmfComponent};
use sphereot::weighting::EnergyKind;

/// Norm deviation above which loaded points are reported.
pub const NORM_WARN: f64 = 1e-6;
/// Norm deviation above which loaded points are rejected.
pub const NORM_REJECT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sphereot::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Process exit code: 2 for invalid input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Where a sample set comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSource {
    /// CSV with header `x0,...,x{d-1}` and one point per row.
    File {
        path: PathBuf,
    },
    /// vMF around `mean`, or around the first basis vector when absent.
    Vmf {
        d: usize,
        n: usize,
        kappa: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
    },
    Uniform {
        d: usize,
        n: usize,
    },
}

impl SampleSource {
    /// Materialize the sample; synthetic sources draw from `seed`.
    pub fn load(&self, seed: u64) -> CliResult<Vec<UnitVector>> {
        let mut rng = rng_from_seed(seed);
        match self {
            SampleSource::File { path } => read_samples(path),
            SampleSource::Vmf { d, n, kappa, mean } => {
                let mean = match mean {
                    Some(m) if m.len() != *d => return Err(CliError::Config(format!("vmf mean has {} coordinates, expected {d}", m.len()))),
                    Some(m) => UnitVector::new(m.clone())?,
                    None => UnitVector::basis(*d, 0)?,
                };
                Ok(sample_vmf(&VmfComponent::new(mean, *kappa)?, *n, &mut rng)?)
            }
            SampleSource::Uniform { d, n } => Ok(sample_uniform_sphere(*d, *n, &mut rng)?),
        }
    }
}

/// Read a sample CSV, normalizing every row.
pub fn read_samples(path: &Path) -> CliResult<Vec<UnitVector>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let d = header.len();
    if header.iter().enumerate().any(|(i, h)| h.trim() != format!("x{i}")) {
        return Err(bad(format!("header must be x0..x{}, got '{}'", d.saturating_sub(1), header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut points = Vec::new();
    let mut worst = 0.0f64;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let coords = record.iter().map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("row {}: {e}", row + 1)))).collect::<CliResult<Vec<f64>>>()?;
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        let dev = (norm - 1.0).abs();
        if dev.is_nan() || dev > NORM_REJECT {
            return Err(bad(format!("row {} has norm {norm}, too far from 1", row + 1)));
        }
        worst = worst.max(dev);
        points.push(UnitVector::new(coords)?);
    }
    if points.is_empty() {
        return Err(bad("no rows".into()));
    }
    if worst > NORM_WARN {
        log::warn!("{}: renormalized rows with norm deviation up to {worst:e}", path.display());
    }
    Ok(points)
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub method: Option<Method>,
    pub kind: Option<EnergyKind>,
    pub p: Option<u32>,
    pub directions: Option<usize>,
}

impl Overrides {
    fn apply_sliced(&self, cfg: &mut SlicedConfig) {
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(k) = self.kind {
            cfg.energy.kind = k;
        }
        if let Some(p) = self.p {
            cfg.p = p;
        }
        if let Some(l) = self.directions {
            cfg.directions = l;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub x: SampleSource,
    pub y: SampleSource,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub distance: SlicedConfig,
}

fn default_method() -> Method {
    Method::Dssw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowRunConfig {
    /// Number of particles, initialized uniformly on S^2.
    pub particles: usize,
    /// Concentration of every component of the icosahedron mixture.
    pub target_kappa: f64,
    /// Size of the stratified target pool.
    pub target_pool: usize,
    pub flow: FlowConfig,
}

impl Default for FlowRunConfig {
    fn default() -> Self {
        Self { particles: 500, target_kappa: 50.0, target_pool: 2400, flow: FlowConfig::default() }
    }
}

const PRESET_MINI: &str = include_str!("../presets/mini.json");
const PRESET_FULL: &str = include_str!("../presets/full.json");

/// A named flow preset: `mini` (mini-batch) or `full` (full batch).
pub fn preset(name: &str) -> CliResult<FlowRunConfig> {
    let text = match name {
        "mini" => PRESET_MINI,
        "full" => PRESET_FULL,
        other => return Err(CliError::Config(format!("unknown preset '{other}' (expected mini or full)"))),
    };
    parse_config(text, name)
}

/// Parse a JSON config; unknown keys are rejected.
pub fn parse_config<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text, &path.display().to_string())
}

/// Evaluate one distance. The report carries its wallclock only with `timing`.
pub fn cmd_distance(mut cfg: DistanceConfig, ov: &Overrides, timing: bool) -> CliResult<DistanceReport> {
    let seed = ov.seed.unwrap_or(cfg.distance.seed);
    cfg.distance.seed = seed;
    ov.apply_sliced(&mut cfg.distance);
    let method = ov.method.unwrap_or(cfg.method);
    cfg.distance.validate()?;
    let x = cfg.x.load(derive_seed(seed, 1))?;
    let y = cfg.y.load(derive_seed(seed, 2))?;
    let mut report = match method {
        Method::Ssw => ssw_hat(&x, &y, &cfg.distance)?,
        Method::Dssw => dssw_hat(&x, &y, &cfg.distance)?,
        Method::Sw => {
            let value = sw_hat(&x, &y, &cfg.distance)?;
            DistanceReport { value, per_direction: Vec::new(), frames_seed: seed, wallclock: None, uniform_fallback: false }
        }
    };
    if !timing {
        report.wallclock = None;
    }
    Ok(report)
}

/// Final metrics of a flow run, printed on stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub step: usize,
    pub nll: Option<f64>,
    pub log_w2: f64,
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(io_err(path))
}

/// Run a gradient flow toward the icosahedron mixture, writing
/// `trajectory.csv` and `metrics.ndjson` into `out`.
pub fn cmd_flow(mut cfg: FlowRunConfig, ov: &Overrides, out: &Path, timing: bool) -> CliResult<FlowSummary> {
    if let Some(s) = ov.seed {
        cfg.flow.seed = s;
    }
    if let Some(m) = ov.method {
        cfg.flow.method = m;
    }
    ov.apply_sliced(&mut cfg.flow.distance);
    cfg.flow.validate()?;
    if cfg.particles == 0 {
        return Err(CliError::Config("particles must be positive".into()));
    }
    let seed = cfg.flow.seed;
    let target = FlowTarget::from_mixture(icosahedron_mixture(cfg.target_kappa)?, cfg.target_pool, derive_seed(seed, 11))?;
    let initial = sample_uniform_sphere(3, cfg.particles, &mut rng_from_seed(derive_seed(seed, 10)))?;
    let mut run = run_flow(initial, &target, &cfg.flow)?;
    if !timing {
        run.metrics.iter_mut().for_each(|m| m.wallclock = None);
    }
    let traj_path = out.join("trajectory.csv");
    let mut w = create(out, "trajectory.csv")?;
    write_trajectory_csv(&mut w, &run.trajectory).map_err(io_err(&traj_path))?;
    finish(w, &traj_path)?;
    let metrics_path = out.join("metrics.ndjson");
    let mut w = create(out, "metrics.ndjson")?;
    write_metrics_ndjson(&mut w, &run.metrics).map_err(io_err(&metrics_path))?;
    finish(w, &metrics_path)?;
    let MetricRow { step, nll, log_w2, .. } = run.metrics.last().cloned().expect("trace includes step 0");
    Ok(FlowSummary { step, nll, log_w2 })
}

/// Run an evolution sweep and write its CSV to `out`.
pub fn cmd_evolve(mut cfg: EvolveConfig, ov: &Overrides, mut out: &mut dyn Write) -> CliResult<()> {
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(m) = ov.method {
        cfg.method = m;
    }
    ov.apply_sliced(&mut cfg.distance);
    let rows = run_evolution(&cfg)?;
    write_evolution_csv(&mut out, cfg.sweep, &rows).map_err(|e| CliError::Io { path: "<output>".into(), source: e })
}

/// Run a benchmark grid and write its CSV to `out`.
pub fn cmd_bench(mut grid: BenchGrid, ov: &Overrides, mut out: &mut dyn Write) -> CliResult<()> {
    if let Some(s) = ov.seed {
        grid.seed = s;
    }
    if let Some(t) = ov.threads {
        grid.threads = t;
    }
    if let Some(p) = ov.p {
        grid.p = p;
    }
    if let Some(l) = ov.directions {
        grid.directions = vec![l];
    }
    match (ov.method, ov.kind) {
        (Some(Method::Sw), _) => grid.methods = vec![BenchMethod::Sw],
        (Some(Method::Ssw), _) => grid.methods = vec![BenchMethod::Ssw],
        (Some(Method::Dssw), kind) => grid.methods = vec![BenchMethod::Dssw(kind.unwrap_or(EnergyKind::Exp))],
        (None, Some(kind)) => grid.methods = vec![BenchMethod::Ssw, BenchMethod::Dssw(kind)],
        (None, None) => {}
    }
    let points = run_bench(&grid)?;
    write_bench_csv(&mut out, &points).map_err(|e| CliError::Io { path: "<output>".into(), source: e })
}
