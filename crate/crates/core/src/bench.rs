//! Wallclock benchmarks of the sliced estimators.
//!
//! Every grid point draws its inputs and frames once from the seed, runs one
//! untimed warm-up call per method, then times `repeats` rounds in which the
//! methods are interleaved so that drift affects all of them alike.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sliced::{dssw_hat_with_frames, ssw_hat_with_frames, sw_directions, sw_hat_with_directions, SlicedConfig};
use crate::sphere::{sample_uniform_sphere, sample_vmf, UnitVector, VmfComponent};
use crate::stats::{mean, quantile};
use crate::stiefel::sample_frames;
use crate::weighting::{EnergyKind, EnergySpec};

/// A benchmarked estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BenchMethod {
    Sw,
    Ssw,
    Dssw(EnergyKind),
}

impl BenchMethod {
    pub fn id(self) -> String {
        match self {
            BenchMethod::Sw => "sw".into(),
            BenchMethod::Ssw => "ssw".into(),
            BenchMethod::Dssw(k) => format!("dssw-{}", k.name()),
        }
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sw" => Ok(BenchMethod::Sw),
            "ssw" => Ok(BenchMethod::Ssw),
            other => match other.strip_prefix("dssw-") {
                Some(kind) => Ok(BenchMethod::Dssw(kind.parse()?)),
                None => Err(Error::InvalidConfig(format!("unknown bench method '{other}'"))),
            },
        }
    }
}

impl TryFrom<String> for BenchMethod {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BenchMethod> for String {
    fn from(m: BenchMethod) -> String {
        m.id()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchGrid {
    pub methods: Vec<BenchMethod>,
    pub n: Vec<usize>,
    #[serde(rename = "L")]
    pub directions: Vec<usize>,
    pub d: Vec<usize>,
    pub p: u32,
    pub repeats: usize,
    pub seed: u64,
    /// Training epochs for parametric energies.
    pub epochs: usize,
    /// When above 1, every method is also timed on the direction-parallel path.
    pub threads: usize,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            methods: vec![
                BenchMethod::Ssw,
                BenchMethod::Dssw(EnergyKind::Exp),
                BenchMethod::Dssw(EnergyKind::Identity),
                BenchMethod::Dssw(EnergyKind::Poly),
                BenchMethod::Dssw(EnergyKind::Linear),
                BenchMethod::Dssw(EnergyKind::Nonlinear),
            ],
            n: vec![500],
            directions: vec![200],
            d: vec![101],
            p: 2,
            repeats: 50,
            seed: 0,
            epochs: 50,
            threads: 1,
        }
    }
}

impl BenchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 5 {
            return Err(Error::InvalidConfig(format!("at least 5 repeats are needed, got {}", self.repeats)));
        }
        if self.methods.is_empty() || self.n.is_empty() || self.directions.is_empty() || self.d.is_empty() {
            return Err(Error::InvalidConfig("bench grid has an empty axis".into()));
        }
        if self.n.contains(&0) || self.directions.contains(&0) || self.d.iter().any(|&d| d < 2) {
            return Err(Error::InvalidConfig("n and L must be positive and d at least 2".into()));
        }
        if !(1..=2).contains(&self.p) {
            return Err(Error::InvalidConfig(format!("p must be 1 or 2, got {}", self.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub method: String,
    pub p: u32,
    #[serde(rename = "L")]
    pub directions: usize,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub median_s: f64,
    pub p10_s: f64,
    pub p90_s: f64,
    pub mean_s: f64,
    pub threads: usize,
    /// SHA-256 of the input samples, identical for every method at a point.
    pub input_hash: String,
}

fn hash_inputs(x: &[UnitVector], y: &[UnitVector]) -> String {
    let mut h = Sha256::new();
    for v in x.iter().chain(y) {
        for c in v.as_slice() {
            h.update(c.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Benchmark inputs for one grid point: a concentrated vMF sample against a
/// uniform one, both of size `n`.
pub fn bench_inputs(n: usize, d: usize, seed: u64) -> Result<(Vec<UnitVector>, Vec<UnitVector>)> {
    let mut rng = rng_from_seed(seed);
    let comp = VmfComponent::new(UnitVector::basis(d, 0)?, 10.0)?;
    let x = sample_vmf(&comp, n, &mut rng)?;
    let y = sample_uniform_sphere(d, n, &mut rng)?;
    Ok((x, y))
}

fn timed(f: impl FnOnce() -> Result<f64>) -> Result<f64> {
    let start = Instant::now();
    std::hint::black_box(f()?);
    Ok(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE))
}

/// Time every method at every `(n, L, d)` point of the grid.
pub fn run_bench(grid: &BenchGrid) -> Result<Vec<BenchPoint>> {
    grid.validate()?;
    let mut points = Vec::new();
    let thread_counts: Vec<usize> = if grid.threads > 1 { vec![1, grid.threads] } else { vec![1] };
    for &n in &grid.n {
        for &l in &grid.directions {
            for &d in &grid.d {
                let point_seed = derive_seed(grid.seed, (n as u64) << 40 ^ (l as u64) << 20 ^ d as u64);
                let (x, y) = bench_inputs(n, d, point_seed)?;
                let input_hash = hash_inputs(&x, &y);
                log::info!("bench point n={n} L={l} d={d}: input sha256 {input_hash}");
                let frames = sample_frames(d, l, point_seed)?;
                let dirs = sw_directions(d, l, point_seed)?;
                for &threads in &thread_counts {
                    let cfgs: Vec<SlicedConfig> = grid
                        .methods
                        .iter()
                        .map(|m| SlicedConfig {
                            p: grid.p,
                            directions: l,
                            seed: point_seed,
                            threads,
                            energy: match m {
                                BenchMethod::Dssw(kind) => EnergySpec { epochs: grid.epochs, ..EnergySpec::new(*kind) },
                                _ => EnergySpec::default(),
                            },
                            ..SlicedConfig::default()
                        })
                        .collect();
                    let call = |i: usize| -> Result<f64> {
                        let cfg = &cfgs[i];
                        match grid.methods[i] {
                            BenchMethod::Sw => sw_hat_with_directions(&x, &y, &dirs, cfg),
                            BenchMethod::Ssw => Ok(ssw_hat_with_frames(&x, &y, &frames, cfg)?.value),
                            BenchMethod::Dssw(_) => Ok(dssw_hat_with_frames(&x, &y, &frames, cfg)?.value),
                        }
                    };
                    for i in 0..grid.methods.len() {
                        call(i)?;
                    }
                    let mut times = vec![Vec::with_capacity(grid.repeats); grid.methods.len()];
                    for _ in 0..grid.repeats {
                        for (i, t) in times.iter_mut().enumerate() {
                            t.push(timed(|| call(i))?);
                        }
                    }
                    for (m, t) in grid.methods.iter().zip(&times) {
                        points.push(BenchPoint {
                            method: m.id(),
                            p: grid.p,
                            directions: l,
                            n,
                            d,
                            seed: point_seed,
                            median_s: quantile(t, 0.5),
                            p10_s: quantile(t, 0.1),
                            p90_s: quantile(t, 0.9),
                            mean_s: mean(t),
                            threads,
                            input_hash: input_hash.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(points)
}

pub const CSV_HEADER: &str = "method,p,L,n,d,seed,median_s,p10_s,p90_s";

/// Write the points in the fixed CSV schema. Parallel timings carry an
/// `@<threads>` suffix on the method id.
pub fn write_bench_csv<W: Write>(out: &mut W, points: &[BenchPoint]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in points {
        let method = if p.threads > 1 { format!("{}@{}", p.method, p.threads) } else { p.method.clone() };
        writeln!(out, "{method},{},{},{},{},{},{:e},{:e},{:e}", p.p, p.directions, p.n, p.d, p.seed, p.median_s, p.p10_s, p.p90_s)?;
    }
    Ok(())
}
