//! Sweeps of a sliced distance over one experimental parameter, repeated over
//! seeds and summarized by median and dispersion.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sliced::{sliced_value, Method, SlicedConfig};
use crate::sphere::{rotate_along_great_circle, sample_uniform_sphere, sample_vmf, UnitVector, VmfComponent};
use crate::stats::{median, std_dev};

/// The parameter being varied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Concentration of a vMF compared against the uniform measure.
    Kappa,
    /// Number of projections; samples stay fixed and only frames vary.
    #[serde(rename = "L")]
    Directions,
    /// Rotation angle between a vMF and its rotated copy.
    Theta,
    /// Ambient dimension of a vMF compared against the uniform measure.
    D,
}

impl std::str::FromStr for Sweep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(Sweep::Kappa),
            "L" | "l" => Ok(Sweep::Directions),
            "theta" => Ok(Sweep::Theta),
            "d" => Ok(Sweep::D),
            other => Err(Error::InvalidConfig(format!("unknown sweep '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub sweep: Sweep,
    pub values: Vec<f64>,
    pub method: Method,
    /// Distance settings; `seed` is replaced per repeat.
    pub distance: SlicedConfig,
    pub repeats: usize,
    /// Samples per measure.
    pub n: usize,
    /// Dimension when not swept.
    pub d: usize,
    /// Concentration when not swept.
    pub kappa: f64,
    pub seed: u64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            sweep: Sweep::Kappa,
            values: vec![1.0, 5.0, 10.0, 50.0, 100.0],
            method: Method::Dssw,
            distance: SlicedConfig::default(),
            repeats: 20,
            n: 500,
            d: 3,
            kappa: 10.0,
            seed: 0,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        self.distance.validate()?;
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep has no values".into()));
        }
        if self.repeats < 2 {
            return Err(Error::InvalidConfig("at least 2 repeats are needed for a dispersion".into()));
        }
        if self.n == 0 || self.d < 2 {
            return Err(Error::InvalidConfig("n must be positive and d at least 2".into()));
        }
        let bad = |v: &f64| match self.sweep {
            Sweep::Kappa => !(*v >= 0.0) || !v.is_finite(),
            Sweep::Directions | Sweep::D => v.fract() != 0.0 || *v < if self.sweep == Sweep::D { 2.0 } else { 1.0 },
            Sweep::Theta => !v.is_finite(),
        };
        if let Some(v) = self.values.iter().find(|v| bad(v)) {
            return Err(Error::InvalidConfig(format!("invalid sweep value {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveRow {
    pub value: f64,
    pub median: f64,
    /// Sample standard deviation over repeats.
    pub dispersion: f64,
}

fn vmf(d: usize, kappa: f64, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    sample_vmf(&VmfComponent::new(UnitVector::basis(d, 0)?, kappa)?, n, &mut rng_from_seed(seed))
}

fn uniform(d: usize, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    sample_uniform_sphere(d, n, &mut rng_from_seed(seed))
}

/// Distance of one repeat at one sweep value.
fn one_repeat(cfg: &EvolveConfig, value: f64, repeat: u64) -> Result<f64> {
    let base = derive_seed(cfg.seed, repeat);
    let (sx, sy, sf) = (derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3));
    let mut dist = SlicedConfig { seed: sf, ..cfg.distance.clone() };
    let (x, y) = match cfg.sweep {
        Sweep::Kappa => (vmf(cfg.d, value, cfg.n, sx)?, uniform(cfg.d, cfg.n, sy)?),
        Sweep::D => {
            let d = value as usize;
            (vmf(d, cfg.kappa, cfg.n, sx)?, uniform(d, cfg.n, sy)?)
        }
        Sweep::Directions => {
            // only the projection frames vary between repeats
            dist.directions = value as usize;
            let fixed = derive_seed(cfg.seed, u64::MAX);
            (vmf(cfg.d, cfg.kappa, cfg.n, derive_seed(fixed, 1))?, uniform(cfg.d, cfg.n, derive_seed(fixed, 2))?)
        }
        Sweep::Theta => {
            let (a, b) = (UnitVector::basis(cfg.d, 0)?, UnitVector::basis(cfg.d, 1)?);
            let x = vmf(cfg.d, cfg.kappa, cfg.n, sx)?;
            let y = vmf(cfg.d, cfg.kappa, cfg.n, sy)?.iter().map(|p| rotate_along_great_circle(p, &a, &b, value)).collect::<Result<Vec<_>>>()?;
            (x, y)
        }
    };
    sliced_value(cfg.method, &x, &y, &dist)
}

/// Run the sweep: one row per value, in the given order.
pub fn run_evolution(cfg: &EvolveConfig) -> Result<Vec<EvolveRow>> {
    cfg.validate()?;
    cfg.values
        .iter()
        .map(|&value| {
            let samples = (0..cfg.repeats as u64).map(|r| one_repeat(cfg, value, r)).collect::<Result<Vec<f64>>>()?;
            Ok(EvolveRow { value, median: median(&samples), dispersion: std_dev(&samples) })
        })
        .collect()
}

/// `k` equally spaced angles `0, 2 pi / k, ..., 2 pi (k - 1) / k`.
pub fn theta_grid(k: usize) -> Vec<f64> {
    (0..k).map(|i| 2.0 * PI * i as f64 / k as f64).collect()
}

pub fn write_evolution_csv<W: Write>(out: &mut W, sweep: Sweep, rows: &[EvolveRow]) -> std::io::Result<()> {
    let name = match sweep {
        Sweep::Kappa => "kappa",
        Sweep::Directions => "L",
        Sweep::Theta => "theta",
        Sweep::D => "d",
    };
    writeln!(out, "{name},median,dispersion")?;
    for r in rows {
        writeln!(out, "{},{:e},{:e}", r.value, r.median, r.dispersion)?;
    }
    Ok(())
}
