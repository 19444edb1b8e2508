//! Particle flows on the sphere: ambient gradient steps on a sliced distance
//! followed by renormalization, a geodesic Langevin sampler, and the metrics
//! used to score both.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment::exact_sphere_w2;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sliced::{sliced_gradient, Method, SlicedConfig};
use crate::sphere::{UnitVector, VmfMixture};

const STREAM_FRAMES: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Pgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    Mini { size: usize },
}

/// Where each step's projection frames come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    /// Fresh frames every step from a seed derived from the master seed.
    Resample,
    /// The frames of `distance.seed` at every step.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub method: Method,
    pub distance: SlicedConfig,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch: Batch,
    pub eval_every: usize,
    pub frames: FrameMode,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            method: Method::Dssw,
            // the 1/L prefactor would shrink gradients below the Adam epsilon
            distance: SlicedConfig { directions: 1000, inverse_l_prefactor: false, ..SlicedConfig::default() },
            optimizer: Optimizer::adam(),
            learning_rate: 0.001,
            steps: 500,
            batch: Batch::Mini { size: 200 },
            eval_every: 50,
            frames: FrameMode::Resample,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        self.distance.validate()?;
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be nonnegative, got {}", self.learning_rate)));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        if let Batch::Mini { size: 0 } = self.batch {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::InvalidConfig("Adam moments must lie in [0, 1) and eps must be positive".into()));
            }
        }
        Ok(())
    }

    fn frames_seed(&self, step: usize) -> u64 {
        match self.frames {
            FrameMode::Fixed => self.distance.seed,
            FrameMode::Resample => derive_seed(derive_seed(self.seed, STREAM_FRAMES), step as u64),
        }
    }
}

/// Particles plus optimizer moments. Step-level randomness is derived from
/// the master seed and the step index, so no generator is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub particles: Vec<UnitVector>,
    pub step: usize,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl FlowState {
    pub fn new(particles: Vec<UnitVector>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let d = particles[0].dim();
        if let Some(p) = particles.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: p.dim() });
        }
        let zeros = vec![vec![0.0; d]; particles.len()];
        Ok(Self { particles, step: 0, first_moment: zeros.clone(), second_moment: zeros })
    }
}

/// One optimizer step against `target_batch`.
pub fn flow_step(state: &FlowState, target_batch: &[UnitVector], cfg: &FlowConfig) -> Result<FlowState> {
    cfg.validate()?;
    if target_batch.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let dist = SlicedConfig { seed: cfg.frames_seed(state.step), ..cfg.distance.clone() };
    let grad = sliced_gradient(cfg.method, &state.particles, target_batch, &dist)?;
    if grad.nondifferentiable {
        log::debug!("step {}: gradient taken at a nondifferentiable point", state.step);
    }
    let mut next = state.clone();
    next.step += 1;
    let t = next.step as i32;
    for (i, g) in grad.gradients.iter().enumerate() {
        let update: Vec<f64> = match cfg.optimizer {
            Optimizer::Pgd => g.iter().map(|gi| cfg.learning_rate * gi).collect(),
            Optimizer::Adam { beta1, beta2, eps } => {
                let m = &mut next.first_moment[i];
                let v = &mut next.second_moment[i];
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                g.iter()
                    .enumerate()
                    .map(|(k, gi)| {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gi;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gi * gi;
                        cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps)
                    })
                    .collect()
            }
        };
        if update.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFiniteUpdate { step: state.step, particle: i });
        }
        if update.iter().all(|u| *u == 0.0) {
            continue;
        }
        let moved: Vec<f64> = state.particles[i].as_slice().iter().zip(&update).map(|(x, u)| x - u).collect();
        next.particles[i] = UnitVector::new(moved).map_err(|_| Error::NonFiniteUpdate { step: state.step, particle: i })?;
    }
    Ok(next)
}

/// The distribution a flow is driven towards: a fixed sample pool for the
/// gradient and the mixture it came from for evaluation.
#[derive(Debug, Clone)]
pub struct FlowTarget {
    pub mixture: VmfMixture,
    pub pool: Vec<UnitVector>,
}

impl FlowTarget {
    /// A stratified pool of `pool_size` samples drawn with `seed`.
    pub fn from_mixture(mixture: VmfMixture, pool_size: usize, seed: u64) -> Result<Self> {
        let pool = mixture.sample_stratified(pool_size, &mut rng_from_seed(seed))?;
        Ok(Self { mixture, pool })
    }

    fn batch(&self, cfg: &FlowConfig, step: usize) -> Result<Vec<UnitVector>> {
        match cfg.batch {
            Batch::Full => Ok(self.pool.clone()),
            Batch::Mini { size } => {
                if size > self.pool.len() {
                    return Err(Error::InvalidConfig(format!("batch size {size} exceeds the pool of {}", self.pool.len())));
                }
                let mut rng = rng_from_seed(derive_seed(derive_seed(cfg.seed, STREAM_BATCH), step as u64));
                Ok(rand::seq::index::sample(&mut rng, self.pool.len(), size).into_iter().map(|i| self.pool[i].clone()).collect())
            }
        }
    }
}

/// One row of the metric trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    /// Absent when the target density is unavailable (dimension other than 3).
    pub nll: Option<f64>,
    pub log_w2: f64,
    /// Seconds since the start of the run; cleared for byte-reproducible output.
    pub wallclock: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    /// Particle snapshots at every evaluation step.
    pub trajectory: Vec<(usize, Vec<UnitVector>)>,
    pub metrics: Vec<MetricRow>,
    pub state: FlowState,
}

/// Sum of negative log densities of the particles under the target.
pub fn nll(particles: &[UnitVector], target: &VmfMixture) -> Result<f64> {
    particles.iter().map(|x| target.log_density(x).map(|l| -l)).sum()
}

/// A fresh stratified target sample the size of the particle set, fixed for
/// the whole run so that checkpoints are comparable.
fn eval_sample(target: &FlowTarget, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    target.mixture.sample_stratified(n, &mut rng_from_seed(derive_seed(seed, STREAM_EVAL)))
}

fn evaluate(particles: &[UnitVector], target: &FlowTarget, reference: &[UnitVector], step: usize, start: Instant) -> Result<MetricRow> {
    let nll = if target.mixture.dim() == 3 { Some(nll(particles, &target.mixture)?) } else { None };
    let log_w2 = exact_sphere_w2(particles, reference)?.ln();
    Ok(MetricRow { step, nll, log_w2, wallclock: Some(start.elapsed().as_secs_f64()) })
}

/// Run `cfg.steps` steps from `initial`, evaluating at step 0, every
/// `eval_every` steps, and at the final step.
pub fn run_flow(initial: Vec<UnitVector>, target: &FlowTarget, cfg: &FlowConfig) -> Result<FlowRun> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = FlowState::new(initial)?;
    let reference = eval_sample(target, state.particles.len(), cfg.seed)?;
    let mut trajectory = vec![(0, state.particles.clone())];
    let mut metrics = vec![evaluate(&state.particles, target, &reference, 0, start)?];
    for k in 0..cfg.steps {
        let batch = target.batch(cfg, k)?;
        state = flow_step(&state, &batch, cfg)?;
        if state.step % cfg.eval_every == 0 || state.step == cfg.steps {
            metrics.push(evaluate(&state.particles, target, &reference, state.step, start)?);
            trajectory.push((state.step, state.particles.clone()));
            log::info!("step {}: log W2 = {:.4}", state.step, metrics.last().map_or(f64::NAN, |m| m.log_w2));
        }
    }
    Ok(FlowRun { trajectory, metrics, state })
}

/// Trajectory CSV: `step,particle_id,x0,...,x{d-1}`.
pub fn write_trajectory_csv<W: Write>(out: &mut W, trajectory: &[(usize, Vec<UnitVector>)]) -> std::io::Result<()> {
    let d = trajectory.first().and_then(|(_, p)| p.first()).map_or(0, |p| p.dim());
    let header: Vec<String> = ["step".to_string(), "particle_id".to_string()].into_iter().chain((0..d).map(|k| format!("x{k}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for (step, particles) in trajectory {
        for (i, p) in particles.iter().enumerate() {
            let coords: Vec<String> = p.as_slice().iter().map(|v| v.to_string()).collect();
            writeln!(out, "{step},{i},{}", coords.join(","))?;
        }
    }
    Ok(())
}

/// Metric trace as newline-delimited JSON.
pub fn write_metrics_ndjson<W: Write>(out: &mut W, metrics: &[MetricRow]) -> std::io::Result<()> {
    for row in metrics {
        writeln!(out, "{}", serde_json::to_string(row).map_err(std::io::Error::other)?)?;
    }
    Ok(())
}

/// One geodesic Langevin step
/// `x+ = normalize(x - gamma (g - <g, x> x) + sqrt(2 gamma) z)` with `g = grad V(x)`.
pub fn gla_step<R: Rng + ?Sized>(
    particles: &[UnitVector],
    grad_potential: impl Fn(&UnitVector) -> Result<Vec<f64>>,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<UnitVector>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidConfig(format!("step size must be positive, got {gamma}")));
    }
    let noise = (2.0 * gamma).sqrt();
    particles
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let g = grad_potential(x)?;
            if g.len() != x.dim() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinitePotential(i));
            }
            let radial: f64 = g.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
            let moved: Vec<f64> =
                x.as_slice().iter().zip(&g).map(|(xi, gi)| xi - gamma * (gi - radial * xi) + noise * rng.sample::<f64, _>(StandardNormal)).collect();
            UnitVector::new(moved).map_err(|_| Error::NonFinitePotential(i))
        })
        .collect()
}

/// Run the Langevin sampler towards a vMF mixture (`V = -log p`).
pub fn run_gla(initial: Vec<UnitVector>, target: &VmfMixture, gamma: f64, steps: usize, seed: u64) -> Result<Vec<UnitVector>> {
    let mut rng = rng_from_seed(seed);
    let grad_v = |x: &UnitVector| target.grad_log_density(x).map(|g| g.into_iter().map(|v| -v).collect());
    let mut particles = initial;
    for _ in 0..steps {
        particles = gla_step(&particles, grad_v, gamma, &mut rng)?;
    }
    Ok(particles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sliced::{dssw_hat, frozen_weighted_value, sliced_gradient};
    use crate::sphere::{icosahedron_means, icosahedron_mixture, sample_uniform_sphere, VmfComponent};
    use crate::stiefel::sample_frames;
    use crate::weighting::{EnergyKind, EnergySpec};

    fn cloud(n: usize, seed: u64) -> Vec<UnitVector> {
        sample_uniform_sphere(3, n, &mut rng_from_seed(seed)).unwrap()
    }

    fn small_cfg(optimizer: Optimizer, lr: f64) -> FlowConfig {
        FlowConfig {
            distance: SlicedConfig { directions: 20, ..SlicedConfig::default() },
            optimizer,
            learning_rate: lr,
            steps: 5,
            batch: Batch::Full,
            eval_every: 2,
            ..FlowConfig::default()
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let state = FlowState::new(cloud(30, 0)).unwrap();
        let target = cloud(25, 1);
        for opt in [Optimizer::Pgd, Optimizer::adam()] {
            let next = flow_step(&state, &target, &small_cfg(opt, 0.0)).unwrap();
            assert_eq!(next.particles, state.particles);
            assert_eq!(next.step, 1);
        }
    }

    #[test]
    fn particles_at_target_stay_put() {
        let x = cloud(20, 2);
        let state = FlowState::new(x.clone()).unwrap();
        let next = flow_step(&state, &x, &small_cfg(Optimizer::adam(), 0.01)).unwrap();
        for (a, b) in next.particles.iter().zip(&x) {
            assert!(a.geodesic(b) < 1e-9);
        }
    }

    #[test]
    fn small_pgd_steps_descend_with_frozen_frames() {
        let x = cloud(64, 3);
        let y = cloud(64, 4);
        let cfg = FlowConfig { frames: FrameMode::Fixed, ..small_cfg(Optimizer::Pgd, 0.0) };
        let before = dssw_hat(&x, &y, &cfg.distance).unwrap().value;
        let decreased = [1e-1, 1e-2, 1e-3].into_iter().any(|lr| {
            let c = FlowConfig { learning_rate: lr, ..cfg.clone() };
            let next = flow_step(&FlowState::new(x.clone()).unwrap(), &y, &c).unwrap();
            dssw_hat(&next.particles, &y, &c.distance).unwrap().value < before
        });
        assert!(decreased);

        let c = FlowConfig { learning_rate: 0.05, ..cfg };
        let mut state = FlowState::new(x).unwrap();
        let mut prev = before;
        for _ in 0..50 {
            state = flow_step(&state, &y, &c).unwrap();
            let v = dssw_hat(&state.particles, &y, &c.distance).unwrap().value;
            assert!(v <= prev + 1e-12, "{v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn gradient_is_descent_direction_for_frozen_weights() {
        let x = cloud(16, 5);
        let y = cloud(16, 6);
        let dist = SlicedConfig { directions: 12, energy: EnergySpec::new(EnergyKind::Exp), ..SlicedConfig::default() };
        let g = sliced_gradient(Method::Dssw, &x, &y, &dist).unwrap();
        let frames = sample_frames(3, 12, dist.seed).unwrap();
        let moved: Vec<UnitVector> =
            x.iter().zip(&g.gradients).map(|(p, gi)| UnitVector::new(p.as_slice().iter().zip(gi).map(|(a, b)| a - 1e-3 * b).collect()).unwrap()).collect();
        let before = frozen_weighted_value(&x, &y, &frames, &g.weights, &dist).unwrap();
        let after = frozen_weighted_value(&moved, &y, &frames, &g.weights, &dist).unwrap();
        assert!(after < before);
    }

    #[test]
    fn run_flow_bookkeeping_and_determinism() {
        let target = FlowTarget::from_mixture(icosahedron_mixture(50.0).unwrap(), 120, 7).unwrap();
        let cfg = FlowConfig { steps: 7, eval_every: 3, batch: Batch::Mini { size: 40 }, ..small_cfg(Optimizer::adam(), 0.01) };
        let run = run_flow(cloud(30, 8), &target, &cfg).unwrap();
        assert_eq!(run.metrics.len(), 7usize.div_ceil(3) + 1);
        assert_eq!(run.metrics.iter().map(|m| m.step).collect::<Vec<_>>(), vec![0, 3, 6, 7]);
        assert_eq!(run.trajectory.len(), run.metrics.len());
        let again = run_flow(cloud(30, 8), &target, &cfg).unwrap();
        assert_eq!(run.state, again.state);

        let one = run_flow(cloud(30, 8), &target, &FlowConfig { steps: 1, ..cfg.clone() }).unwrap();
        let direct = flow_step(&FlowState::new(cloud(30, 8)).unwrap(), &target.batch(&cfg, 0).unwrap(), &cfg).unwrap();
        assert_eq!(one.state, direct);

        let none = run_flow(cloud(30, 8), &target, &FlowConfig { steps: 0, ..cfg }).unwrap();
        assert_eq!(none.trajectory, vec![(0, cloud(30, 8))]);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let target = FlowTarget::from_mixture(icosahedron_mixture(5.0).unwrap(), 10, 0).unwrap();
        let cfg = FlowConfig { batch: Batch::Mini { size: 11 }, ..small_cfg(Optimizer::Pgd, 0.1) };
        assert!(matches!(run_flow(cloud(5, 0), &target, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn exports_have_expected_shape() {
        let traj = vec![(0, cloud(2, 0)), (5, cloud(2, 1))];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,particle_id,x0,x1,x2");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("5,0,"));

        let rows = vec![MetricRow { step: 0, nll: Some(1.5), log_w2: -0.5, wallclock: Some(0.25) }];
        let mut buf = Vec::new();
        write_metrics_ndjson(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"step\":0,\"nll\":1.5,\"log_w2\":-0.5,\"wallclock\":0.25}\n");
        let mut buf = Vec::new();
        write_metrics_ndjson(&mut buf, &[MetricRow { nll: None, wallclock: None, ..rows[0].clone() }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"step\":0,\"nll\":null,\"log_w2\":-0.5,\"wallclock\":null}\n");
    }

    #[test]
    fn nll_examples() {
        let uniform = VmfMixture::single(VmfComponent::new(UnitVector::basis(3, 2).unwrap(), 0.0).unwrap());
        let x = vec![UnitVector::basis(3, 2).unwrap()];
        assert!((nll(&x, &uniform).unwrap() - (4.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let mix = icosahedron_mixture(50.0).unwrap();
        let pts = cloud(10, 3);
        let doubled: Vec<UnitVector> = pts.iter().chain(&pts).cloned().collect();
        assert!((nll(&doubled, &mix).unwrap() - 2.0 * nll(&pts, &mix).unwrap()).abs() < 1e-9);

        // 200 particles cycling over the modes against a direct-sum oracle
        let modes = icosahedron_means();
        let particles: Vec<UnitVector> = (0..200).map(|i| modes[i % 12].clone()).collect();
        let norm = 50.0 / (2.0 * std::f64::consts::PI * (1.0 - (-100f64).exp()));
        let oracle: f64 = particles
            .iter()
            .map(|p| {
                let dens: f64 = modes.iter().map(|m| norm * (50.0 * (p.dot(m) - 1.0)).exp() / 12.0).sum();
                -dens.ln()
            })
            .sum();
        assert!((nll(&particles, &mix).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn gla_keeps_unit_norm_and_bounded_steps() {
        let mut rng = rng_from_seed(1);
        let x = cloud(50, 9);
        let grad = |_: &UnitVector| Ok(vec![1.0, -2.0, 0.5]);
        let gamma = 1e-6;
        let y = gla_step(&x, grad, gamma, &mut rng).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((b.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
            let disp: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            // |Z| in 3 dimensions stays below 6 with overwhelming probability
            assert!(disp <= (2.0 * gamma).sqrt() * 6.0 + gamma * 21f64.sqrt());
        }
        let bad = |_: &UnitVector| Ok(vec![f64::NAN, 0.0, 0.0]);
        assert_eq!(gla_step(&x, bad, 0.1, &mut rng).unwrap_err(), Error::NonFinitePotential(0));
    }

    #[test]
    fn norms_survive_many_steps() {
        let mix = VmfMixture::single(VmfComponent::new(UnitVector::basis(3, 0).unwrap(), 10.0).unwrap());
        let out = run_gla(cloud(20, 10), &mix, 1e-2, 10_000, 11).unwrap();
        for p in &out {
            assert!((p.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        }
    }
}
