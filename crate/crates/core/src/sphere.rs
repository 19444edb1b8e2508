//! Geometry of the unit hypersphere `S^{d-1}`.
//!
//! Points, 2-frames defining great circles, projection onto those circles,
//! the normalized angular coordinate on `S^1`, uniform and von Mises-Fisher
//! sampling, and the vMF mixtures used as flow targets.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on unit norms and orthonormality checks.
pub const UNIT_TOL: f64 = 1e-9;

/// Default threshold below which a projection onto a frame plane is degenerate.
pub const DEFAULT_PROJ_EPS: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A point on `S^{d-1}`, `d >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes `coords` onto the sphere.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionTooSmall(coords.len()));
        }
        let n = norm(&coords);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let mut coords = coords;
        coords.iter_mut().for_each(|c| *c /= n);
        Ok(Self(coords))
    }

    /// Standard basis vector `e_axis` in dimension `d`.
    pub fn basis(d: usize, axis: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::DimensionTooSmall(d));
        }
        if axis >= d {
            return Err(Error::DimensionMismatch { expected: d, got: axis + 1 });
        }
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Great-circle distance `arccos <x, y>`, evaluated through chord
    /// lengths so that it stays accurate near 0 and near pi.
    pub fn geodesic(&self, other: &UnitVector) -> f64 {
        let chord = |sign: f64| self.0.iter().zip(&other.0).map(|(a, b)| (a - sign * b).powi(2)).sum::<f64>().sqrt();
        if self.dot(other) >= 0.0 {
            2.0 * (0.5 * chord(1.0)).min(1.0).asin()
        } else {
            std::f64::consts::PI - 2.0 * (0.5 * chord(-1.0)).min(1.0).asin()
        }
    }

    pub fn neg(&self) -> UnitVector {
        UnitVector(self.0.iter().map(|c| -c).collect())
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Vec<f64> {
        v.0
    }
}

/// A `d x 2` matrix with orthonormal columns; spans one great circle.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelFrame {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl StiefelFrame {
    pub fn new(first: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::DimensionMismatch { expected: first.len(), got: second.len() });
        }
        if first.len() < 2 {
            return Err(Error::DimensionTooSmall(first.len()));
        }
        let dev = gram_deviation(&first, &second);
        if !(dev <= UNIT_TOL) {
            return Err(Error::NonOrthonormalFrame(dev));
        }
        Ok(Self { first, second })
    }

    /// Frame from columns already known to be orthonormal.
    pub(crate) fn from_orthonormal(first: Vec<f64>, second: Vec<f64>) -> Self {
        debug_assert!(gram_deviation(&first, &second) <= UNIT_TOL);
        Self { first, second }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn first(&self) -> &[f64] {
        &self.first
    }

    pub fn second(&self) -> &[f64] {
        &self.second
    }

    /// `U^T x` without normalization.
    #[inline]
    pub fn apply_transpose(&self, x: &[f64]) -> [f64; 2] {
        let mut a = 0.0;
        let mut b = 0.0;
        for ((xi, ui), vi) in x.iter().zip(&self.first).zip(&self.second) {
            a += xi * ui;
            b += xi * vi;
        }
        [a, b]
    }

    /// Max entry of `|U^T U - I_2|`.
    pub fn orthonormality_error(&self) -> f64 {
        gram_deviation(&self.first, &self.second)
    }
}

fn gram_deviation(a: &[f64], b: &[f64]) -> f64 {
    let aa = (dot(a, a) - 1.0).abs();
    let bb = (dot(b, b) - 1.0).abs();
    let ab = dot(a, b).abs();
    aa.max(bb).max(ab)
}

/// Normalized angle on `S^1`: a full turn is 1 and values lie in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct CircleSample(f64);

impl CircleSample {
    /// Wraps any finite real into `[0, 1)`.
    pub fn new(t: f64) -> Self {
        Self(wrap_unit(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The point on `S^1` whose [`circle_coordinate`] is this sample.
    pub fn to_point(self) -> [f64; 2] {
        let theta = 2.0 * PI * self.0 - PI;
        [-theta.cos(), -theta.sin()]
    }
}

#[inline]
pub(crate) fn wrap_unit(t: f64) -> f64 {
    let w = t.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// `(pi + atan2(-y, -x)) / (2 pi)` wrapped into `[0, 1)`. Scale invariant in `(x, y)`.
#[inline]
pub(crate) fn angle_coordinate(x: f64, y: f64) -> f64 {
    let t = (PI + (-y).atan2(-x)) / (2.0 * PI);
    if t >= 1.0 {
        0.0
    } else {
        t
    }
}

/// Geodesic projection `U^T x / |U^T x|` of `x` onto the great circle of `frame`.
pub fn geodesic_project(x: &UnitVector, frame: &StiefelFrame, eps: f64) -> Result<[f64; 2]> {
    if x.dim() != frame.dim() {
        return Err(Error::DimensionMismatch { expected: frame.dim(), got: x.dim() });
    }
    let [a, b] = frame.apply_transpose(x.as_slice());
    let r = a.hypot(b);
    if !(r > eps) {
        return Err(Error::DegenerateProjection(r));
    }
    Ok([a / r, b / r])
}

/// Normalized angular coordinate of a unit point on `S^1`.
///
/// Panics in debug builds if `p` is not unit norm within `1e-6`.
pub fn circle_coordinate(p: [f64; 2]) -> CircleSample {
    debug_assert!((p[0].hypot(p[1]) - 1.0).abs() <= 1e-6, "point not on S^1: {p:?}");
    CircleSample(angle_coordinate(p[0], p[1]))
}

fn standard_normal_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform sample on `S^{d-1}` by normalizing Gaussian vectors.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // a zero Gaussian vector has probability zero; redraw if it happens
        if let Ok(v) = UnitVector::new(standard_normal_vec(d, rng)) {
            out.push(v);
        }
    }
    Ok(out)
}

/// A single von Mises-Fisher component. `kappa = 0` is the uniform law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfComponent {
    pub mean: UnitVector,
    pub kappa: f64,
}

impl VmfComponent {
    pub fn new(mean: UnitVector, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidKappa(kappa));
        }
        Ok(Self { mean, kappa })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }
}

/// Draw `n` samples from a vMF by Wood's rejection scheme.
///
/// The cosine `w = <x, mu>` is drawn by rejection from a Beta envelope, a
/// uniform tangent direction completes the point around `e_1`, and a
/// Householder reflection carries `e_1` to the mean.
pub fn sample_vmf<R: Rng + ?Sized>(comp: &VmfComponent, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
    let d = comp.dim();
    if comp.kappa == 0.0 {
        return sample_uniform_sphere(d, n, rng);
    }
    let kappa = comp.kappa;
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("positive Beta parameters");

    let mu = comp.mean.as_slice();
    // Householder vector mapping e_1 to mu; None when mu is e_1 already.
    let mut h: Vec<f64> = mu.iter().map(|m| -m).collect();
    h[0] += 1.0;
    let hh = dot(&h, &h);
    let reflect = hh > 1e-24;

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };
        let tangent = loop {
            let v = standard_normal_vec(d - 1, rng);
            let nv = norm(&v);
            if nv > 0.0 {
                break v.into_iter().map(|c| c / nv).collect::<Vec<_>>();
            }
        };
        let s = (1.0 - w * w).max(0.0).sqrt();
        let mut x = Vec::with_capacity(d);
        x.push(w);
        x.extend(tangent.iter().map(|t| s * t));
        if reflect {
            let coef = 2.0 * dot(&h, &x) / hh;
            x.iter_mut().zip(&h).for_each(|(xi, hi)| *xi -= coef * hi);
        }
        out.push(UnitVector::new(x)?);
    }
    Ok(out)
}

fn log_sinh(k: f64) -> f64 {
    if k > 20.0 {
        k - std::f64::consts::LN_2 + (-(-2.0 * k).exp()).ln_1p()
    } else {
        k.sinh().ln()
    }
}

/// Log density of a vMF on `S^2` with respect to surface measure.
pub fn vmf_log_density(comp: &VmfComponent, x: &UnitVector) -> Result<f64> {
    if comp.dim() != 3 {
        return Err(Error::UnsupportedDimension(comp.dim()));
    }
    if x.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: x.dim() });
    }
    let log_area = (4.0 * PI).ln();
    let k = comp.kappa;
    if k == 0.0 {
        return Ok(-log_area);
    }
    // log(k / sinh k), written to stay accurate as k -> 0
    let log_ratio = if k < 1e-4 { -k * k / 6.0 } else { k.ln() - log_sinh(k) };
    Ok(log_ratio - log_area + k * comp.mean.dot(x))
}

/// A finite mixture of vMF components with positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfMixture {
    components: Vec<VmfComponent>,
    weights: Vec<f64>,
}

impl VmfMixture {
    pub fn new(components: Vec<VmfComponent>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::InvalidMixtureWeights(weights.iter().sum()));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidMixtureWeights(sum));
        }
        Ok(Self { components, weights })
    }

    pub fn equal_weights(components: Vec<VmfComponent>) -> Result<Self> {
        let k = components.len().max(1);
        let weights = vec![1.0 / k as f64; components.len()];
        Self::new(components, weights)
    }

    pub fn single(comp: VmfComponent) -> Self {
        Self { components: vec![comp], weights: vec![1.0] }
    }

    pub fn components(&self) -> &[VmfComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// `log sum_i w_i p_i(x)` with the max-shift trick.
    pub fn log_density(&self, x: &UnitVector) -> Result<f64> {
        let logs = self.components.iter().zip(&self.weights).map(|(c, w)| Ok(w.ln() + vmf_log_density(c, x)?)).collect::<Result<Vec<f64>>>()?;
        if logs.len() == 1 {
            return Ok(logs[0]);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
    }

    /// Ambient gradient of `log p(x)`: responsibility-weighted `kappa_i mu_i`.
    pub fn grad_log_density(&self, x: &UnitVector) -> Result<Vec<f64>> {
        let logs = self.components.iter().zip(&self.weights).map(|(c, w)| Ok(w.ln() + vmf_log_density(c, x)?)).collect::<Result<Vec<f64>>>()?;
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = resp.iter().sum();
        let mut g = vec![0.0; x.dim()];
        for (c, r) in self.components.iter().zip(&resp) {
            let scale = r / total * c.kappa;
            g.iter_mut().zip(c.mean.as_slice()).for_each(|(gi, mi)| *gi += scale * mi);
        }
        Ok(g)
    }

    /// I.i.d. draws: a categorical component pick, then a vMF draw.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut idx = self.components.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            out.extend(sample_vmf(&self.components[idx], 1, rng)?);
        }
        Ok(out)
    }

    /// Draws with per-component counts fixed to the largest-remainder
    /// rounding of `n * w_i`, returned grouped by component.
    pub fn sample_stratified<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<UnitVector>> {
        let mut out = Vec::with_capacity(n);
        for (comp, count) in self.components.iter().zip(self.stratified_counts(n)) {
            out.extend(sample_vmf(comp, count, rng)?);
        }
        Ok(out)
    }

    pub fn stratified_counts(&self, n: usize) -> Vec<usize> {
        let exact: Vec<f64> = self.weights.iter().map(|w| w * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut rest = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[i] += 1;
            rest -= 1;
        }
        counts
    }
}

/// Log density of a mixture at `x`.
pub fn mixture_log_density(mixture: &VmfMixture, x: &UnitVector) -> Result<f64> {
    mixture.log_density(x)
}

/// The 12 vertices of the regular icosahedron, normalized: cyclic
/// permutations of `(0, +-1, +-phi)` with `phi` the golden ratio.
pub fn icosahedron_means() -> Vec<UnitVector> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut out = Vec::with_capacity(12);
    for s1 in [1.0, -1.0] {
        for s2 in [1.0, -1.0] {
            let (a, b) = (s1, s2 * phi);
            for v in [[0.0, a, b], [a, b, 0.0], [b, 0.0, a]] {
                out.push(UnitVector::new(v.to_vec()).expect("nonzero vertex"));
            }
        }
    }
    out
}

/// Equal-weight vMF mixture centered on the icosahedron vertices.
pub fn icosahedron_mixture(kappa: f64) -> Result<VmfMixture> {
    let comps = icosahedron_means().into_iter().map(|m| VmfComponent::new(m, kappa)).collect::<Result<Vec<_>>>()?;
    VmfMixture::equal_weights(comps)
}

/// Rotate `x` by `theta` in the plane spanned by the orthonormal pair
/// `(a, b)`, moving `a` towards `b`; components outside the plane are fixed.
pub fn rotate_along_great_circle(x: &UnitVector, a: &UnitVector, b: &UnitVector, theta: f64) -> Result<UnitVector> {
    let d = x.dim();
    if a.dim() != d || b.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: a.dim().max(b.dim()) });
    }
    let dev = gram_deviation(a.as_slice(), b.as_slice());
    if !(dev <= UNIT_TOL) {
        return Err(Error::NonOrthonormalAxis(dev));
    }
    let xa = x.dot(a);
    let xb = x.dot(b);
    let (s, c) = theta.sin_cos();
    let ca = (c - 1.0) * xa - s * xb;
    let cb = (c - 1.0) * xb + s * xa;
    let v: Vec<f64> = x.as_slice().iter().zip(a.as_slice().iter().zip(b.as_slice())).map(|(xi, (ai, bi))| xi + ca * ai + cb * bi).collect();
    UnitVector::new(v)
}
