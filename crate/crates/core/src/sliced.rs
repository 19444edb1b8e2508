//! Sliced estimators on the sphere: SW over linear directions, SSW over
//! great circles, and DSSW with per-direction weights, together with
//! particle gradients for flows.
//!
//! Gradients follow the envelope argument: the optimal circular shift, the
//! induced matching and the direction weights are held fixed, and only the
//! matched displacements are differentiated through the circle coordinate and
//! the geodesic projection.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::circular::{circ_w1_level_median, circ_w2_vs_uniform, optimal_shift, shift_cost_gradient, CircularEmpirical, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sphere::{angle_coordinate, dot, sample_uniform_sphere, StiefelFrame, UnitVector, DEFAULT_PROJ_EPS};
use crate::stiefel::{jitter_towards, sample_frames, FrameBatch};
use crate::weighting::{nonparametric_weights, parametric_weights, softmax, train_network, EnergySpec, NetworkParams};

const JITTER_SCALE: f64 = 1e-10;

/// Which sliced distance to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sw,
    Ssw,
    Dssw,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sw => "sw",
            Method::Ssw => "ssw",
            Method::Dssw => "dssw",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sw" => Ok(Method::Sw),
            "ssw" => Ok(Method::Ssw),
            "dssw" => Ok(Method::Dssw),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Per-direction circular solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Exact `W_1` from the level median (requires `p = 1`).
    LevelMedian,
    BinarySearch,
    /// Closed-form `W_2^2` against the uniform measure (requires `p = 2`).
    VsUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicedConfig {
    pub p: u32,
    #[serde(rename = "L")]
    pub directions: usize,
    pub solver: Solver,
    pub energy: EnergySpec,
    /// Seed of the projection frames (or directions for SW).
    pub seed: u64,
    /// Bracket width of the shift search.
    pub tol: f64,
    /// Projections with `|U^T x|` at or below this are degenerate.
    pub proj_eps: f64,
    /// Keep the `1/L` factor in front of the weighted sum.
    pub inverse_l_prefactor: bool,
    /// Worker threads for the per-direction solves; 1 runs inline.
    pub threads: usize,
}

impl Default for SlicedConfig {
    fn default() -> Self {
        Self {
            p: 2,
            directions: 100,
            solver: Solver::BinarySearch,
            energy: EnergySpec::default(),
            seed: 0,
            tol: DEFAULT_TOL,
            proj_eps: DEFAULT_PROJ_EPS,
            inverse_l_prefactor: true,
            threads: 1,
        }
    }
}

impl SlicedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.p) {
            return Err(Error::InvalidConfig(format!("p must be 1 or 2, got {}", self.p)));
        }
        if self.directions == 0 {
            return Err(Error::InvalidConfig("L must be at least 1".into()));
        }
        if self.solver == Solver::LevelMedian && self.p != 1 {
            return Err(Error::InvalidConfig("level_median solver requires p = 1".into()));
        }
        if self.solver == Solver::VsUniform && self.p != 2 {
            return Err(Error::InvalidConfig("vs_uniform solver requires p = 2".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tol)));
        }
        if !(self.proj_eps >= 0.0) {
            return Err(Error::InvalidConfig("projection epsilon must be nonnegative".into()));
        }
        self.energy.validate()
    }

    fn scale(&self) -> f64 {
        if self.inverse_l_prefactor {
            1.0 / self.directions as f64
        } else {
            1.0
        }
    }
}

/// One direction's contribution: its `W_p^p` and its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionTerm {
    pub distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    pub per_direction: Vec<DirectionTerm>,
    pub frames_seed: u64,
    /// Seconds spent in the call; absent when timing is suppressed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wallclock: Option<f64>,
    /// Set when identity/poly weights fell back to uniform on all-zero distances.
    #[serde(default)]
    pub uniform_fallback: bool,
}

impl DistanceReport {
    /// `(1/L) sum_l w_l W_l` recomputed from the stored terms.
    pub fn recompute(&self) -> f64 {
        let l = self.per_direction.len() as f64;
        self.per_direction.iter().map(|t| t.weight * t.distance).sum::<f64>() / l
    }
}

/// Particle gradients of a sliced distance with respect to the first sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicedGradient {
    pub value: f64,
    /// One tangent vector per particle.
    pub gradients: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Some atom sat on the coordinate cut, coincided with its match, or tied.
    pub nondifferentiable: bool,
}

fn check_samples(x: &[UnitVector], y: &[UnitVector]) -> Result<usize> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let d = x[0].dim();
    if let Some(bad) = x.iter().chain(y).find(|v| v.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.dim() });
    }
    Ok(d)
}

/// Whether `(a, b)` should be evaluated as `(b, a)` so that both argument
/// orders run the identical computation.
fn needs_swap(a: &[UnitVector], b: &[UnitVector]) -> bool {
    let key = |s: &[UnitVector]| s.iter().flat_map(|v| v.as_slice().iter().map(|c| c.to_bits())).collect::<Vec<u64>>();
    match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => key(b) < key(a),
    }
}

/// Circle coordinates of every point of `x` and `y` on one great circle,
/// with the unnormalized plane coordinates kept for the chain rule.
struct DirectionCoords {
    frame: StiefelFrame,
    tx: Vec<f64>,
    ty: Vec<f64>,
    zx: Vec<[f64; 2]>,
    zy: Vec<[f64; 2]>,
}

/// Circle coordinates and plane coordinates, or the first degenerate point and its radius.
type Projected = std::result::Result<(Vec<f64>, Vec<[f64; 2]>), (usize, f64)>;

fn project_set(points: &[UnitVector], frame: &StiefelFrame, eps: f64) -> Projected {
    let mut t = Vec::with_capacity(points.len());
    let mut z = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let [a, b] = frame.apply_transpose(p.as_slice());
        let r = a.hypot(b);
        if !(r > eps) {
            return Err((i, r));
        }
        t.push(angle_coordinate(a, b));
        z.push([a, b]);
    }
    Ok((t, z))
}

fn project_direction(x: &[UnitVector], y: &[UnitVector], frame: &StiefelFrame, eps: f64) -> Result<DirectionCoords> {
    let attempt = |f: &StiefelFrame| -> std::result::Result<DirectionCoords, (usize, f64, bool)> {
        let (tx, zx) = project_set(x, f, eps).map_err(|(i, r)| (i, r, true))?;
        let (ty, zy) = project_set(y, f, eps).map_err(|(i, r)| (i, r, false))?;
        Ok(DirectionCoords { frame: f.clone(), tx, ty, zx, zy })
    };
    match attempt(frame) {
        Ok(c) => Ok(c),
        Err((i, _, in_x)) => {
            let p = if in_x { &x[i] } else { &y[i] };
            log::debug!("degenerate projection, retrying with a jittered frame");
            let jittered = jitter_towards(frame, p.as_slice(), JITTER_SCALE)?;
            attempt(&jittered).map_err(|(_, r, _)| Error::DegenerateProjection(r))
        }
    }
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

fn sorted_measure(t: &[f64], order: &[usize]) -> CircularEmpirical {
    CircularEmpirical::from_sorted_unchecked(order.iter().map(|&i| t[i]).collect())
}

/// `W_p^p` and, when the solver produces it, the optimal shift.
fn circular_distance(mu: &CircularEmpirical, nu: &CircularEmpirical, cfg: &SlicedConfig) -> Result<(f64, Option<f64>)> {
    if mu.atoms() == nu.atoms() {
        return Ok((0.0, Some(0.0)));
    }
    match cfg.solver {
        Solver::LevelMedian => Ok((circ_w1_level_median(mu, nu)?, None)),
        Solver::BinarySearch => {
            let opt = optimal_shift(mu, nu, cfg.p, cfg.tol)?;
            Ok((opt.value, Some(opt.alpha)))
        }
        Solver::VsUniform => Err(Error::InvalidConfig("vs_uniform needs dssw_hat_vs_uniform".into())),
    }
}

/// Evaluate `f` for every index in order, on a worker pool when `threads > 1`.
fn map_directions<T: Send>(l: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if threads <= 1 {
        return (0..l).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| (0..l).into_par_iter().map(f).collect())
}

struct Solved {
    coords: DirectionCoords,
    order_x: Vec<usize>,
    order_y: Vec<usize>,
    distance: f64,
    alpha: Option<f64>,
}

fn solve_directions(x: &[UnitVector], y: &[UnitVector], frames: &[StiefelFrame], cfg: &SlicedConfig) -> Result<Vec<Solved>> {
    map_directions(frames.len(), cfg.threads, |l| {
        let coords = project_direction(x, y, &frames[l], cfg.proj_eps)?;
        let (order_x, order_y) = (argsort(&coords.tx), argsort(&coords.ty));
        let mu = sorted_measure(&coords.tx, &order_x);
        let nu = sorted_measure(&coords.ty, &order_y);
        let (distance, alpha) = circular_distance(&mu, &nu, cfg)?;
        Ok(Solved { coords, order_x, order_y, distance, alpha })
    })
}

fn coordinate_matrix(solved: &[Solved]) -> Matrix {
    let cols = solved[0].coords.tx.len() + solved[0].coords.ty.len();
    let mut data = Vec::with_capacity(solved.len() * cols);
    for s in solved {
        data.extend_from_slice(&s.coords.tx);
        data.extend_from_slice(&s.coords.ty);
    }
    Matrix::from_vec(solved.len(), cols, data)
}

/// Weights for the given energy; parametric kinds train a network first.
fn energy_weights(spec: &EnergySpec, distances: &[f64], coords: impl FnOnce() -> Matrix) -> Result<(Vec<f64>, bool)> {
    if !spec.kind.is_parametric() {
        let (w, fallback) = nonparametric_weights(distances, spec.kind)?;
        return Ok((w.into_vec(), fallback));
    }
    let a = coords();
    let net = match &spec.network {
        Some(net) if net.directions == a.rows && net.input_width == a.cols => net.clone(),
        Some(net) => return Err(Error::ShapeMismatch(format!("checkpoint expects {}x{} input, got {}x{}", net.directions, net.input_width, a.rows, a.cols))),
        None => NetworkParams::init(spec, a.rows, a.cols)?,
    };
    let trained = train_network(&net, &a, distances, spec.epochs, spec.learning_rate, spec.maximize)?;
    if spec.literal_final_weights {
        return Ok((softmax(distances), false));
    }
    Ok((parametric_weights(&trained.net, &a)?.into_vec(), false))
}

fn build_report(distances: Vec<f64>, weights: Vec<f64>, scale: f64, seed: u64, fallback: bool, start: Instant) -> DistanceReport {
    let value = scale * distances.iter().zip(&weights).map(|(d, w)| w * d).sum::<f64>();
    let per_direction = distances.into_iter().zip(weights).map(|(distance, weight)| DirectionTerm { distance, weight }).collect();
    DistanceReport { value, per_direction, frames_seed: seed, wallclock: Some(start.elapsed().as_secs_f64()), uniform_fallback: fallback }
}

fn frames_for(d: usize, cfg: &SlicedConfig) -> Result<FrameBatch> {
    sample_frames(d, cfg.directions, cfg.seed)
}

/// Spherical sliced-Wasserstein estimate `(1/L) sum_l W_p^p` with unit weights.
pub fn ssw_hat(x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<DistanceReport> {
    cfg.validate()?;
    let start = Instant::now();
    let d = check_samples(x, y)?;
    let frames = frames_for(d, cfg)?;
    ssw_with_frames(x, y, &frames, cfg, start)
}

/// [`ssw_hat`] over a caller-supplied frame batch.
pub fn ssw_hat_with_frames(x: &[UnitVector], y: &[UnitVector], frames: &FrameBatch, cfg: &SlicedConfig) -> Result<DistanceReport> {
    cfg.validate()?;
    check_samples(x, y)?;
    ssw_with_frames(x, y, frames, cfg, Instant::now())
}

fn ssw_with_frames(x: &[UnitVector], y: &[UnitVector], frames: &FrameBatch, cfg: &SlicedConfig, start: Instant) -> Result<DistanceReport> {
    let (x, y) = if needs_swap(x, y) { (y, x) } else { (x, y) };
    let distances: Vec<f64> = solve_directions(x, y, &frames.frames, cfg)?.into_iter().map(|s| s.distance).collect();
    let l = distances.len();
    Ok(build_report(distances, vec![1.0; l], 1.0 / l as f64, frames.seed, false, start))
}

/// Discriminative spherical sliced-Wasserstein estimate `(1/L) sum_l w_l W_p^p`.
pub fn dssw_hat(x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<DistanceReport> {
    cfg.validate()?;
    let start = Instant::now();
    let d = check_samples(x, y)?;
    let frames = frames_for(d, cfg)?;
    dssw_with_frames(x, y, &frames, cfg, start)
}

/// [`dssw_hat`] over a caller-supplied frame batch.
pub fn dssw_hat_with_frames(x: &[UnitVector], y: &[UnitVector], frames: &FrameBatch, cfg: &SlicedConfig) -> Result<DistanceReport> {
    cfg.validate()?;
    check_samples(x, y)?;
    dssw_with_frames(x, y, frames, cfg, Instant::now())
}

fn dssw_with_frames(x: &[UnitVector], y: &[UnitVector], frames: &FrameBatch, cfg: &SlicedConfig, start: Instant) -> Result<DistanceReport> {
    let (x, y) = if needs_swap(x, y) { (y, x) } else { (x, y) };
    let solved = solve_directions(x, y, &frames.frames, cfg)?;
    let distances: Vec<f64> = solved.iter().map(|s| s.distance).collect();
    let (weights, fallback) = energy_weights(&cfg.energy, &distances, || coordinate_matrix(&solved))?;
    if fallback {
        log::info!("all projected distances are zero; using uniform weights");
    }
    Ok(build_report(distances, weights, cfg.scale(), frames.seed, fallback, start))
}

/// DSSW between `x` and the uniform measure on the sphere, using the closed
/// form on each great circle. Requires `p = 2` and a non-parametric energy.
pub fn dssw_hat_vs_uniform(x: &[UnitVector], cfg: &SlicedConfig) -> Result<DistanceReport> {
    cfg.validate()?;
    if cfg.p != 2 {
        return Err(Error::InvalidConfig("the uniform closed form is for p = 2".into()));
    }
    if cfg.energy.kind.is_parametric() {
        return Err(Error::InvalidConfig("parametric energies need a second sample set".into()));
    }
    let start = Instant::now();
    let d = check_samples(x, x)?;
    let frames = frames_for(d, cfg)?;
    let distances = map_directions(frames.len(), cfg.threads, |l| {
        let coords = project_direction(x, &[], &frames.frames[l], cfg.proj_eps)?;
        circ_w2_vs_uniform(&sorted_measure(&coords.tx, &argsort(&coords.tx)))
    })?;
    let (weights, fallback) = energy_weights(&cfg.energy, &distances, || unreachable!())?;
    Ok(build_report(distances, weights, cfg.scale(), frames.seed, fallback, start))
}

/// Uniform directions for the linear slicing of [`sw_hat`].
pub fn sw_directions(d: usize, l: usize, seed: u64) -> Result<Vec<UnitVector>> {
    if l == 0 {
        return Err(Error::InvalidConfig("L must be at least 1".into()));
    }
    sample_uniform_sphere(d, l, &mut rng_from_seed(seed))
}

/// Walk the merged quantile grid of two sorted samples on the line,
/// calling `visit(i, j, length)` for every piece.
fn line_pieces(n: usize, m: usize, mut visit: impl FnMut(usize, usize, f64)) {
    let (nf, mf) = (n as f64, m as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0.0;
    while i < n && j < m {
        let a = (i + 1) as f64 / nf;
        let b = (j + 1) as f64 / mf;
        let next = a.min(b);
        if next > pos {
            visit(i, j, next - pos);
            pos = next;
        }
        if a <= b {
            i += 1;
        }
        if b <= a {
            j += 1;
        }
    }
}

fn pow_abs(v: f64, p: u32) -> f64 {
    if p == 1 {
        v.abs()
    } else {
        v * v
    }
}

/// `W_p^p` between two sorted samples on the real line.
fn line_w(xs: &[f64], ys: &[f64], p: u32) -> f64 {
    let mut acc = 0.0;
    line_pieces(xs.len(), ys.len(), |i, j, len| acc += len * pow_abs(xs[i] - ys[j], p));
    acc
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Sliced-Wasserstein estimate over `L` uniform linear directions.
pub fn sw_hat(x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<f64> {
    cfg.validate()?;
    let d = check_samples(x, y)?;
    sw_hat_with_directions(x, y, &sw_directions(d, cfg.directions, cfg.seed)?, cfg)
}

/// [`sw_hat`] over caller-supplied directions.
pub fn sw_hat_with_directions(x: &[UnitVector], y: &[UnitVector], dirs: &[UnitVector], cfg: &SlicedConfig) -> Result<f64> {
    check_samples(x, y)?;
    if dirs.is_empty() {
        return Err(Error::InvalidConfig("L must be at least 1".into()));
    }
    let (x, y) = if needs_swap(x, y) { (y, x) } else { (x, y) };
    let terms = map_directions(dirs.len(), cfg.threads, |l| {
        let px: Vec<f64> = x.iter().map(|v| v.dot(&dirs[l])).collect();
        let py: Vec<f64> = y.iter().map(|v| v.dot(&dirs[l])).collect();
        Ok(line_w(&sorted_copy(&px), &sorted_copy(&py), cfg.p))
    })?;
    Ok(terms.iter().sum::<f64>() / dirs.len() as f64)
}

fn tangent_project(g: &mut [f64], x: &[f64]) {
    let c = dot(g, x);
    g.iter_mut().zip(x).for_each(|(gi, xi)| *gi -= c * xi);
}

fn derivative_weight(diff: f64, p: u32, flag: &mut bool) -> f64 {
    if p == 1 {
        if diff == 0.0 {
            *flag = true;
            0.0
        } else {
            diff.signum()
        }
    } else {
        2.0 * diff
    }
}

/// Gradient of the linear sliced distance with respect to `x`.
pub fn sw_gradient(x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<SlicedGradient> {
    cfg.validate()?;
    let d = check_samples(x, y)?;
    let dirs = sw_directions(d, cfg.directions, cfg.seed)?;
    let l = dirs.len();
    let per_dir = map_directions(l, cfg.threads, |k| {
        let px: Vec<f64> = x.iter().map(|v| v.dot(&dirs[k])).collect();
        let py: Vec<f64> = y.iter().map(|v| v.dot(&dirs[k])).collect();
        let (ox, oy) = (argsort(&px), argsort(&py));
        let mut flag = false;
        let mut dx = vec![0.0; x.len()];
        let mut value = 0.0;
        line_pieces(x.len(), y.len(), |i, j, len| {
            let diff = px[ox[i]] - py[oy[j]];
            value += len * pow_abs(diff, cfg.p);
            dx[ox[i]] += len * derivative_weight(diff, cfg.p, &mut flag);
        });
        Ok((value, dx, flag))
    })?;
    let inv_l = 1.0 / l as f64;
    let mut gradients = vec![vec![0.0; d]; x.len()];
    let mut value = 0.0;
    let mut nondifferentiable = false;
    for (k, (v, dx, flag)) in per_dir.into_iter().enumerate() {
        value += v;
        nondifferentiable |= flag;
        for (g, s) in gradients.iter_mut().zip(&dx) {
            g.iter_mut().zip(dirs[k].as_slice()).for_each(|(gi, th)| *gi += inv_l * s * th);
        }
    }
    for (g, xi) in gradients.iter_mut().zip(x) {
        tangent_project(g, xi.as_slice());
    }
    Ok(SlicedGradient { value: value * inv_l, gradients, weights: vec![1.0; l], nondifferentiable })
}

/// `d t / d x` for the circle coordinate of a point whose plane coordinates are `z`.
fn coordinate_jacobian(frame: &StiefelFrame, z: [f64; 2], out: &mut [f64], scale: f64) {
    let r2 = z[0] * z[0] + z[1] * z[1];
    let c = scale / (2.0 * PI * r2);
    let (a, b) = (-z[1] * c, z[0] * c);
    for ((o, u), v) in out.iter_mut().zip(frame.first()).zip(frame.second()) {
        *o += a * u + b * v;
    }
}

/// Per-direction derivatives of `W_p^p` with respect to the circle
/// coordinates of both sets, at the optimal shift.
struct DirectionGrad {
    d_tx: Vec<f64>,
    d_ty: Vec<f64>,
    flag: bool,
}

fn direction_gradient(solved: &Solved, cfg: &SlicedConfig) -> Result<DirectionGrad> {
    let (ox, oy) = (&solved.order_x, &solved.order_y);
    let mu = sorted_measure(&solved.coords.tx, ox);
    let nu = sorted_measure(&solved.coords.ty, oy);
    let mut d_tx = vec![0.0; ox.len()];
    let mut d_ty = vec![0.0; oy.len()];
    if mu.atoms() == nu.atoms() {
        return Ok(DirectionGrad { d_tx, d_ty, flag: false });
    }
    let alpha = match solved.alpha {
        Some(a) => a,
        None => optimal_shift(&mu, &nu, cfg.p, cfg.tol)?.alpha,
    };
    let g = shift_cost_gradient(&mu, &nu, cfg.p, alpha);
    for (rank, &i) in ox.iter().enumerate() {
        d_tx[i] = g.d_mu[rank];
    }
    for (rank, &j) in oy.iter().enumerate() {
        d_ty[j] = g.d_nu[rank];
    }
    Ok(DirectionGrad { d_tx, d_ty, flag: g.nondifferentiable })
}

/// Gradient of a great-circle sliced distance with respect to `x`, with the
/// given weights held fixed.
fn circle_gradient(x: &[UnitVector], solved: &[Solved], weights: &[f64], scale: f64, x_is_first: bool, cfg: &SlicedConfig) -> Result<(Vec<Vec<f64>>, bool)> {
    let d = x[0].dim();
    let grads = map_directions(solved.len(), cfg.threads, |l| direction_gradient(&solved[l], cfg))?;
    let mut out = vec![vec![0.0; d]; x.len()];
    let mut flag = false;
    for ((s, g), w) in solved.iter().zip(&grads).zip(weights) {
        flag |= g.flag;
        let (dt, z) = if x_is_first { (&g.d_tx, &s.coords.zx) } else { (&g.d_ty, &s.coords.zy) };
        for i in 0..x.len() {
            if dt[i] != 0.0 {
                coordinate_jacobian(&s.coords.frame, z[i], &mut out[i], scale * w * dt[i]);
            }
        }
    }
    for (g, xi) in out.iter_mut().zip(x) {
        tangent_project(g, xi.as_slice());
    }
    Ok((out, flag))
}

fn great_circle_gradient(x: &[UnitVector], y: &[UnitVector], frames: &FrameBatch, cfg: &SlicedConfig, weighted: bool) -> Result<SlicedGradient> {
    let swap = needs_swap(x, y);
    let (a, b) = if swap { (y, x) } else { (x, y) };
    let solved = solve_directions(a, b, &frames.frames, cfg)?;
    let distances: Vec<f64> = solved.iter().map(|s| s.distance).collect();
    let l = distances.len();
    let (weights, scale) =
        if weighted { (energy_weights(&cfg.energy, &distances, || coordinate_matrix(&solved))?.0, cfg.scale()) } else { (vec![1.0; l], 1.0 / l as f64) };
    let value = scale * distances.iter().zip(&weights).map(|(d, w)| w * d).sum::<f64>();
    let (gradients, nondifferentiable) = circle_gradient(x, &solved, &weights, scale, !swap, cfg)?;
    Ok(SlicedGradient { value, gradients, weights, nondifferentiable })
}

/// Envelope gradient of [`ssw_hat`] with respect to `x`.
pub fn ssw_gradient(x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<SlicedGradient> {
    cfg.validate()?;
    let d = check_samples(x, y)?;
    great_circle_gradient(x, y, &frames_for(d, cfg)?, cfg, false)
}

/// Envelope gradient of [`dssw_hat`] with respect to `x`, weights held fixed.
pub fn dssw_gradient(x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<SlicedGradient> {
    cfg.validate()?;
    let d = check_samples(x, y)?;
    great_circle_gradient(x, y, &frames_for(d, cfg)?, cfg, true)
}

/// Gradient of the chosen sliced distance over a caller-supplied frame batch
/// (ignored for SW, whose directions come from `cfg.seed`).
pub fn sliced_gradient_with_frames(method: Method, x: &[UnitVector], y: &[UnitVector], frames: &FrameBatch, cfg: &SlicedConfig) -> Result<SlicedGradient> {
    cfg.validate()?;
    check_samples(x, y)?;
    match method {
        Method::Sw => sw_gradient(x, y, cfg),
        Method::Ssw => great_circle_gradient(x, y, frames, cfg, false),
        Method::Dssw => great_circle_gradient(x, y, frames, cfg, true),
    }
}

/// Gradient of the chosen sliced distance with frames drawn from `cfg.seed`.
pub fn sliced_gradient(method: Method, x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<SlicedGradient> {
    match method {
        Method::Sw => sw_gradient(x, y, cfg),
        Method::Ssw => ssw_gradient(x, y, cfg),
        Method::Dssw => dssw_gradient(x, y, cfg),
    }
}

/// Value of the chosen sliced distance with frames drawn from `cfg.seed`.
pub fn sliced_value(method: Method, x: &[UnitVector], y: &[UnitVector], cfg: &SlicedConfig) -> Result<f64> {
    match method {
        Method::Sw => sw_hat(x, y, cfg),
        Method::Ssw => Ok(ssw_hat(x, y, cfg)?.value),
        Method::Dssw => Ok(dssw_hat(x, y, cfg)?.value),
    }
}

/// Weighted sum `scale * sum_l w_l W_l` over fixed frames and weights.
pub fn frozen_weighted_value(x: &[UnitVector], y: &[UnitVector], frames: &FrameBatch, weights: &[f64], cfg: &SlicedConfig) -> Result<f64> {
    cfg.validate()?;
    check_samples(x, y)?;
    if weights.len() != frames.len() {
        return Err(Error::ShapeMismatch(format!("{} weights for {} frames", weights.len(), frames.len())));
    }
    let (a, b) = if needs_swap(x, y) { (y, x) } else { (x, y) };
    let solved = solve_directions(a, b, &frames.frames, cfg)?;
    Ok(cfg.scale() * solved.iter().zip(weights).map(|(s, w)| w * s.distance).sum::<f64>())
}
