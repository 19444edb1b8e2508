//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::Rng;

use sphereot::autodiff::Matrix;
use sphereot::bench::{run_bench, BenchGrid, BenchMethod};
use sphereot::circular::{brute_force_circ_w, circ_w1_level_median, optimal_shift, CircularEmpirical, DEFAULT_TOL};
use sphereot::evolution::{run_evolution, theta_grid, EvolveConfig, Sweep};
use sphereot::flows::{run_flow, run_gla, FlowConfig, FlowTarget};
use sphereot::rng::{derive_seed, rng_from_seed};
use sphereot::sliced::{dssw_gradient, dssw_hat, frozen_weighted_value, ssw_hat, SlicedConfig, Solver};
use sphereot::sphere::{icosahedron_mixture, sample_uniform_sphere, sample_vmf, UnitVector, VmfComponent, VmfMixture};
use sphereot::stats::{log_log_slope, median, std_dev};
use sphereot::stiefel::sample_frames;
use sphereot::weighting::{grad_check, EnergyKind, EnergySpec, NetInit, NetworkParams};

const SYMMETRY_TOL: f64 = 1e-12;
const SELF_DISTANCE_TOL: f64 = 1e-12;
const UNIFORM_IDENTITY_TOL: f64 = 1e-12;
const ORACLE_GRID: usize = 100_000;
const ORACLE_SLACK: f64 = 2e-5 + 1e-8;
const MC_SLOPE: f64 = -0.5;
const MC_SLOPE_TOL: f64 = 0.15;
const DIMENSION_GAP_RATIO: f64 = 3.0;
const NETWORK_GRAD_TOL: f64 = 1e-4;
const ATTENTION_GRAD_TOL: f64 = 1e-3;
const ENVELOPE_GRAD_TOL: f64 = 1e-4;
const FLOW_LOG_W2: f64 = -2.0;
const OVERHEAD_NONPARAMETRIC: f64 = 1.10;
const OVERHEAD_PARAMETRIC: f64 = 20.0;
const GLA_ANGLE_DEG: f64 = 5.0;

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) {
    let within = elapsed <= budget;
    let verdict = if pass && within { "PASS" } else { "FAIL" };
    println!("criterion {id} [{name}]: {verdict} ({detail}; {:.1}s of {}s)", elapsed.as_secs_f64(), budget.as_secs());
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(within, "criterion {id} exceeded its time budget");
}

fn cloud(d: usize, n: usize, seed: u64) -> Vec<UnitVector> {
    sample_uniform_sphere(d, n, &mut rng_from_seed(seed)).unwrap()
}

fn vmf(mean: UnitVector, kappa: f64, n: usize, seed: u64) -> Vec<UnitVector> {
    sample_vmf(&VmfComponent::new(mean, kappa).unwrap(), n, &mut rng_from_seed(seed)).unwrap()
}

#[test]
fn criterion_1_metric_axioms() {
    let start = Instant::now();
    let mut rng = rng_from_seed(1);
    let (mut worst_asym, mut worst_self, mut min_value) = (0.0f64, 0.0f64, f64::INFINITY);
    for i in 0..1000u64 {
        let d = [3, 10, 50][i as usize % 3];
        let kind = EnergyKind::ALL[(i / 3) as usize % 6];
        let (n, m) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let x = cloud(d, n, derive_seed(i, 1));
        let y = cloud(d, m, derive_seed(i, 2));
        let cfg =
            SlicedConfig { directions: 10, seed: i, energy: EnergySpec { epochs: 3, attention_width: 32, ..EnergySpec::new(kind) }, ..SlicedConfig::default() };
        let xy = dssw_hat(&x, &y, &cfg).unwrap().value;
        let yx = dssw_hat(&y, &x, &cfg).unwrap().value;
        let xx = dssw_hat(&x, &x, &cfg).unwrap().value;
        min_value = min_value.min(xy);
        worst_asym = worst_asym.max((xy - yx).abs());
        worst_self = worst_self.max(xx.abs());
    }
    let pass = min_value >= 0.0 && worst_asym < SYMMETRY_TOL && worst_self < SELF_DISTANCE_TOL;
    report(
        1,
        "metric axioms",
        pass,
        format!("min {min_value:e}, max asymmetry {worst_asym:e}, max self-distance {worst_self:e}"),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_2_uniform_weight_identity() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let l = 5 + (i as usize % 20);
        let (x, y, kind) = if i % 2 == 0 {
            // on the circle every great circle is the circle itself
            (cloud(2, 30, derive_seed(i, 1)), cloud(2, 25, derive_seed(i, 2)), [EnergyKind::Exp, EnergyKind::Identity, EnergyKind::Poly][(i / 2) as usize % 3])
        } else {
            (
                cloud(4, 30, derive_seed(i, 1)),
                cloud(4, 25, derive_seed(i, 2)),
                [EnergyKind::Linear, EnergyKind::Nonlinear, EnergyKind::Attention][(i / 2) as usize % 3],
            )
        };
        let energy = EnergySpec { epochs: 0, init: NetInit::Zero, attention_width: 16, ..EnergySpec::new(kind) };
        let cfg = SlicedConfig { directions: l, seed: i, energy, ..SlicedConfig::default() };
        let d = dssw_hat(&x, &y, &cfg).unwrap().value;
        let s = ssw_hat(&x, &y, &cfg).unwrap().value;
        worst = worst.max((d - s / l as f64).abs());
    }
    report(2, "uniform-weight identity", worst < UNIFORM_IDENTITY_TOL, format!("max |dssw - ssw/L| {worst:e}"), start.elapsed(), Duration::from_secs(60));
}

#[test]
fn criterion_3_circular_oracle() {
    let start = Instant::now();
    let mut rng = rng_from_seed(3);
    let mut worst = 0.0f64;
    for i in 0..500 {
        let p = 1 + (i % 2) as u32;
        let n = rng.random_range(1..=8);
        let draw = |rng: &mut sphereot::rng::SphereRng| CircularEmpirical::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (mu, nu) = (draw(&mut rng), draw(&mut rng));
        let bf = brute_force_circ_w(&mu, &nu, p, ORACLE_GRID).unwrap();
        worst = worst.max((optimal_shift(&mu, &nu, p, DEFAULT_TOL).unwrap().value - bf).abs());
        if p == 1 {
            worst = worst.max((circ_w1_level_median(&mu, &nu).unwrap() - bf).abs());
        }
    }
    report(3, "circular OT oracle", worst <= ORACLE_SLACK, format!("max deviation {worst:e}"), start.elapsed(), Duration::from_secs(300));
}

#[test]
fn criterion_4_monte_carlo_rate() {
    let start = Instant::now();
    let x = vmf(UnitVector::basis(3, 0).unwrap(), 10.0, 500, 41);
    let y = vmf(UnitVector::basis(3, 2).unwrap(), 10.0, 500, 42);
    let ls = [10usize, 100, 1000];
    let stds: Vec<f64> = ls
        .iter()
        .map(|&l| {
            let values: Vec<f64> = (0..50u64)
                .map(|s| {
                    let cfg = SlicedConfig {
                        directions: l,
                        seed: derive_seed(4, s),
                        energy: EnergySpec::new(EnergyKind::Exp),
                        inverse_l_prefactor: false,
                        ..SlicedConfig::default()
                    };
                    dssw_hat(&x, &y, &cfg).unwrap().value
                })
                .collect();
            std_dev(&values)
        })
        .collect();
    let slope = log_log_slope(&ls.map(|l| l as f64), &stds);
    report(
        4,
        "Monte Carlo rate",
        (slope - MC_SLOPE).abs() <= MC_SLOPE_TOL,
        format!("slope {slope:.3}, std {stds:?}"),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

#[test]
fn criterion_5_dimension_free_sample_error() {
    let start = Instant::now();
    let mut medians = Vec::new();
    for d in [3usize, 20, 100] {
        let (a, b) = (UnitVector::basis(d, 0).unwrap(), UnitVector::basis(d, 1).unwrap());
        let gaps: Vec<f64> = (0..20u64)
            .map(|s| {
                let seed = derive_seed(5, s);
                let cfg = SlicedConfig {
                    p: 1,
                    solver: Solver::LevelMedian,
                    directions: 100,
                    seed,
                    energy: EnergySpec::new(EnergyKind::Exp),
                    ..SlicedConfig::default()
                };
                let dist = |n: usize, stream: u64| {
                    let x = vmf(a.clone(), 10.0, n, derive_seed(seed, stream));
                    let y = vmf(b.clone(), 10.0, n, derive_seed(seed, stream + 1));
                    dssw_hat(&x, &y, &cfg).unwrap().value
                };
                (dist(500, 1) - dist(8000, 3)).abs()
            })
            .collect();
        medians.push(median(&gaps));
    }
    let ratio = medians.iter().cloned().fold(0.0, f64::max) / medians.iter().cloned().fold(f64::INFINITY, f64::min);
    report(
        5,
        "dimension-free sample error",
        ratio < DIMENSION_GAP_RATIO,
        format!("median gaps {medians:?} at d = 3, 20, 100; ratio {ratio:.2}"),
        start.elapsed(),
        Duration::from_secs(600),
    );
}

fn tangent_basis(x: &[f64]) -> Vec<Vec<f64>> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..x.len() {
        let mut e = vec![0.0; x.len()];
        e[k] = 1.0;
        for b in std::iter::once(x.to_vec()).chain(basis.iter().cloned()) {
            let c = dot(&e, &b);
            e.iter_mut().zip(&b).for_each(|(ei, bi)| *ei -= c * bi);
        }
        let n = dot(&e, &e).sqrt();
        if n > 1e-6 {
            basis.push(e.into_iter().map(|v| v / n).collect());
        }
    }
    basis
}

#[test]
fn criterion_6_gradient_correctness() {
    let start = Instant::now();
    let mut rng = rng_from_seed(6);
    let (l, cols) = (6, 10);
    let a = Matrix::from_vec(l, cols, (0..l * cols).map(|_| rng.random::<f64>()).collect());
    let dists: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
    let mut net_errors = Vec::new();
    let mut pass = true;
    for kind in [EnergyKind::Linear, EnergyKind::Nonlinear, EnergyKind::Attention] {
        let net = NetworkParams::init(&EnergySpec { attention_width: 16, ..EnergySpec::new(kind) }, l, cols).unwrap();
        let err = grad_check(&net, &a, &dists).unwrap();
        pass &= err < if kind == EnergyKind::Attention { ATTENTION_GRAD_TOL } else { NETWORK_GRAD_TOL };
        net_errors.push(err);
    }

    let x = cloud(3, 8, 61);
    let y = cloud(3, 7, 62);
    let mut envelope = 0.0f64;
    for kind in [EnergyKind::Exp, EnergyKind::Identity, EnergyKind::Poly, EnergyKind::Linear] {
        let cfg = SlicedConfig { directions: 12, seed: 63, energy: EnergySpec::new(kind), ..SlicedConfig::default() };
        let frames = sample_frames(3, 12, cfg.seed).unwrap();
        let g = dssw_gradient(&x, &y, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            for e in tangent_basis(x[i].as_slice()) {
                let moved = |s: f64| {
                    let mut z = x.clone();
                    z[i] = UnitVector::new(x[i].as_slice().iter().zip(&e).map(|(a, b)| a + s * b).collect()).unwrap();
                    frozen_weighted_value(&z, &y, &frames, &g.weights, &cfg).unwrap()
                };
                let fd = (moved(h) - moved(-h)) / (2.0 * h);
                let an: f64 = g.gradients[i].iter().zip(&e).map(|(u, v)| u * v).sum();
                envelope = envelope.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
            }
        }
    }
    pass &= envelope < ENVELOPE_GRAD_TOL;
    report(
        6,
        "gradient correctness",
        pass,
        format!("network rel. errors {net_errors:?}, envelope rel. error {envelope:e}"),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_7_gradient_flow() {
    let start = Instant::now();
    let mut finals = Vec::new();
    let mut nll_traces: Vec<Vec<f64>> = Vec::new();
    for seed in 0..3u64 {
        let target = FlowTarget::from_mixture(icosahedron_mixture(50.0).unwrap(), 2400, derive_seed(seed, 11)).unwrap();
        let initial = cloud(3, 500, derive_seed(seed, 10));
        let mut cfg = FlowConfig { seed, ..FlowConfig::default() };
        cfg.distance.energy = EnergySpec::new(EnergyKind::Exp);
        let run = run_flow(initial, &target, &cfg).unwrap();
        finals.push(run.metrics.last().unwrap().log_w2);
        nll_traces.push(run.metrics.iter().map(|m| m.nll.unwrap()).collect());
    }
    let final_w2 = median(&finals);
    let k = nll_traces[0].len();
    let median_nll: Vec<f64> = (0..k).map(|j| median(&nll_traces.iter().map(|t| t[j]).collect::<Vec<_>>())).collect();
    let tail = &median_nll[k - 5..];
    let monotone = tail.windows(2).all(|w| w[1] < w[0]);
    report(
        7,
        "gradient flow",
        final_w2 <= FLOW_LOG_W2 && monotone,
        format!("median final log W2 {final_w2:.3} (per seed {finals:?}), last median NLLs {tail:?}"),
        start.elapsed(),
        Duration::from_secs(1800),
    );
}

#[test]
fn criterion_8_evolution_studies() {
    let start = Instant::now();
    let base = EvolveConfig { repeats: 20, n: 500, d: 3, distance: SlicedConfig { directions: 100, ..SlicedConfig::default() }, ..EvolveConfig::default() };

    let kappa = run_evolution(&EvolveConfig { sweep: Sweep::Kappa, values: vec![1.0, 5.0, 10.0, 50.0, 100.0], ..base.clone() }).unwrap();
    let kappa_ok = kappa.windows(2).all(|w| w[1].median >= w[0].median);

    let theta = run_evolution(&EvolveConfig { sweep: Sweep::Theta, values: theta_grid(8), ..base.clone() }).unwrap();
    let peak = theta.iter().max_by(|a, b| a.median.total_cmp(&b.median)).unwrap().value;
    let theta_ok = (peak - PI).abs() < 1e-12;

    let dirs = run_evolution(&EvolveConfig { sweep: Sweep::Directions, values: vec![10.0, 100.0, 1000.0], ..base }).unwrap();
    let dirs_ok = dirs.windows(2).all(|w| w[1].dispersion < w[0].dispersion);
    report(
        8,
        "evolution studies",
        kappa_ok && theta_ok && dirs_ok,
        format!(
            "kappa medians {:?}, theta peak {peak:.4}, L dispersions {:?}",
            kappa.iter().map(|r| r.median).collect::<Vec<_>>(),
            dirs.iter().map(|r| r.dispersion).collect::<Vec<_>>()
        ),
        start.elapsed(),
        Duration::from_secs(600),
    );
}

#[test]
fn criterion_9_runtime_overhead() {
    let start = Instant::now();
    let grid = BenchGrid {
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
        repeats: 50,
        epochs: 50,
        ..BenchGrid::default()
    };
    let points = run_bench(&grid).unwrap();
    let ssw = points.iter().find(|p| p.method == "ssw").unwrap().median_s;
    let mut pass = true;
    let mut ratios = Vec::new();
    for p in points.iter().filter(|p| p.method != "ssw") {
        let ratio = p.median_s / ssw;
        let parametric = p.method.parse::<BenchMethod>().map(|m| matches!(m, BenchMethod::Dssw(k) if k.is_parametric())).unwrap();
        pass &= ratio <= if parametric { OVERHEAD_PARAMETRIC } else { OVERHEAD_NONPARAMETRIC };
        ratios.push(format!("{} {ratio:.3}", p.method));
    }
    report(9, "runtime overhead", pass, format!("ssw median {ssw:.4}s; ratios {}", ratios.join(", ")), start.elapsed(), Duration::from_secs(600));
}

#[test]
fn criterion_10_langevin_sampler() {
    let start = Instant::now();
    let mu = UnitVector::new(vec![1.0, 2.0, 2.0]).unwrap();
    let target = VmfMixture::single(VmfComponent::new(mu.clone(), 10.0).unwrap());
    let angles: Vec<f64> = (0..5u64)
        .map(|seed| {
            let particles = run_gla(cloud(3, 200, derive_seed(10, seed)), &target, 1e-3, 10_000, seed).unwrap();
            let mut m = [0.0; 3];
            for p in &particles {
                m.iter_mut().zip(p.as_slice()).for_each(|(a, b)| *a += b);
            }
            let mean = UnitVector::new(m.to_vec()).unwrap();
            mean.geodesic(&mu).to_degrees()
        })
        .collect();
    let med = median(&angles);
    report(10, "Langevin sampler", med <= GLA_ANGLE_DEG, format!("median angle {med:.3} deg, per seed {angles:?}"), start.elapsed(), Duration::from_secs(300));
}
