//! Exact optimal transport between equal-mass empirical measures on the
//! circle `S^1`, parameterized by normalized angles in `[0, 1)`.
//!
//! All solvers rely on the lifted formulation
//!
//! ```text
//! W_p^p(mu, nu) = min_alpha  int_0^1 | F_mu^{-1}(q) - F_nu^{-1}(q + alpha) |^p dq
//! ```
//!
//! where `F_nu^{-1}` is extended to the real line by `F^{-1}(q + 1) = F^{-1}(q) + 1`.
//! For a fixed shift `alpha` both quantile functions are piecewise constant,
//! so the integral is evaluated exactly by merging the two quantile grids.
//! The objective is convex in `alpha` and its minimizer lies in `(-1, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{wrap_unit, CircleSample};

/// Default bracket width for the shift search.
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_BISECTIONS: usize = 200;

/// Uniform empirical measure on the circle, atoms sorted ascending in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircularEmpirical {
    atoms: Vec<f64>,
}

impl CircularEmpirical {
    /// Wraps every value into `[0, 1)` and sorts.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("circle atoms must be finite".into()));
        }
        let mut atoms: Vec<f64> = values.into_iter().map(wrap_unit).collect();
        atoms.sort_by(f64::total_cmp);
        Ok(Self { atoms })
    }

    pub fn from_samples(samples: &[CircleSample]) -> Result<Self> {
        Self::new(samples.iter().map(|s| s.value()).collect())
    }

    /// Caller guarantees `atoms` is nonempty, sorted, and inside `[0, 1)`.
    pub(crate) fn from_sorted_unchecked(atoms: Vec<f64>) -> Self {
        debug_assert!(!atoms.is_empty());
        debug_assert!(atoms.windows(2).all(|w| w[0] <= w[1]));
        Self { atoms }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

#[inline]
fn pow_abs(v: f64, p: u32) -> f64 {
    match p {
        1 => v.abs(),
        2 => v * v,
        _ => v.abs().powi(p as i32),
    }
}

/// Index `j` of the lifted quantile cell `[j/m, (j+1)/m)` containing `alpha`.
fn starting_cell(alpha: f64, m: usize) -> i64 {
    let mf = m as f64;
    let mut j = (alpha * mf).floor() as i64;
    while (j + 1) as f64 / mf - alpha <= 0.0 {
        j += 1;
    }
    while j as f64 / mf - alpha > 0.0 {
        j -= 1;
    }
    j
}

/// Quantile grid boundaries of a fixed pair, shared across many shifts.
struct Grid<'a> {
    x: &'a [f64],
    y: &'a [f64],
    /// `(i + 1) / n` for every atom of `x`.
    mu_bounds: Vec<f64>,
    /// `k / m` for `k` in `-offset..`, covering every lifted cell reachable
    /// from a shift in `[-3, 3]`.
    nu_bounds: Vec<f64>,
    offset: i64,
}

impl<'a> Grid<'a> {
    fn new(x: &'a [f64], y: &'a [f64]) -> Self {
        let (n, m) = (x.len(), y.len());
        let mf = m as f64;
        let offset = 3 * m as i64 + 2;
        Self {
            x,
            y,
            mu_bounds: (0..n).map(|i| (i + 1) as f64 / n as f64).collect(),
            nu_bounds: (-offset..=offset + m as i64 + 2).map(|k| k as f64 / mf).collect(),
            offset,
        }
    }

    #[inline]
    fn nu_bound(&self, k: i64) -> f64 {
        match self.nu_bounds.get((k + self.offset) as usize) {
            Some(&b) if k + self.offset >= 0 => b,
            _ => k as f64 / self.y.len() as f64,
        }
    }

    /// Walk the merged quantile grid of `x` against `y` shifted by `alpha`,
    /// calling `visit(i, j_mod, lifted_y, length)` for each piece of positive length.
    #[inline]
    fn walk(&self, alpha: f64, mut visit: impl FnMut(usize, usize, f64, f64)) {
        let (x, y) = (self.x, self.y);
        let n = x.len();
        let m = y.len() as i64;
        let mut j = starting_cell(alpha, y.len());
        let mut jm = j.rem_euclid(m) as usize;
        let mut lift = j.div_euclid(m) as f64;
        let mut i = 0usize;
        let mut pos = 0.0;
        loop {
            let next_mu = self.mu_bounds[i];
            let next_nu = self.nu_bound(j + 1) - alpha;
            let next = next_mu.min(next_nu);
            let len = next - pos;
            if len > 0.0 {
                visit(i, jm, y[jm] + lift, len);
            }
            pos = pos.max(next);
            if next_mu <= next_nu {
                i += 1;
                if i == n {
                    break;
                }
            }
            if next_nu <= next_mu {
                j += 1;
                jm += 1;
                if jm == y.len() {
                    jm = 0;
                    lift += 1.0;
                }
            }
        }
    }

    /// Right derivative of the cost in `alpha`. Cells of `y` slide left as
    /// `alpha` grows, so a piece shrinks at unit rate when it ends on a cell
    /// boundary of `y` and grows when it starts on one.
    fn slope(&self, p: u32, alpha: f64) -> f64 {
        let (x, y) = (self.x, self.y);
        let n = x.len();
        let m = y.len() as i64;
        let mut j = starting_cell(alpha, y.len());
        let mut jm = j.rem_euclid(m) as usize;
        let mut lift = j.div_euclid(m) as f64;
        let mut i = 0usize;
        let mut starts_on_nu = false;
        let mut acc = 0.0;
        loop {
            let next_mu = self.mu_bounds[i];
            let next_nu = self.nu_bound(j + 1) - alpha;
            let c = pow_abs(x[i] - (y[jm] + lift), p);
            if starts_on_nu {
                acc += c;
            }
            if next_nu <= next_mu {
                acc -= c;
                j += 1;
                jm += 1;
                if jm == y.len() {
                    jm = 0;
                    lift += 1.0;
                }
            }
            if next_mu <= next_nu {
                if next_mu == next_nu {
                    // a sliver of the next cell of `y` opens before this boundary
                    acc += pow_abs(x[i] - (y[jm] + lift), p);
                }
                starts_on_nu = false;
                i += 1;
                if i == n {
                    break;
                }
            } else {
                starts_on_nu = true;
            }
        }
        acc
    }

    fn cost(&self, p: u32, alpha: f64) -> f64 {
        let x = self.x;
        let mut acc = 0.0;
        self.walk(alpha, |i, _, lifted, len| acc += len * pow_abs(x[i] - lifted, p));
        acc
    }
}

#[inline]
fn walk_pieces(x: &[f64], y: &[f64], alpha: f64, visit: impl FnMut(usize, usize, f64, f64)) {
    Grid::new(x, y).walk(alpha, visit)
}

/// The shifted objective `int_0^1 |F_x^{-1}(q) - F_y^{-1}(q + alpha)|^p dq`.
pub fn shift_cost(mu: &CircularEmpirical, nu: &CircularEmpirical, p: u32, alpha: f64) -> f64 {
    shift_cost_raw(&mu.atoms, &nu.atoms, p, alpha)
}

fn shift_cost_raw(x: &[f64], y: &[f64], p: u32, alpha: f64) -> f64 {
    Grid::new(x, y).cost(p, alpha)
}

/// Derivatives of the shifted objective at a fixed shift with respect to the
/// sorted atoms of both measures.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftGradient {
    pub d_mu: Vec<f64>,
    pub d_nu: Vec<f64>,
    /// Set when some matched pair coincides (p = 1 subgradient choice) or an
    /// atom sits at the coordinate cut `t = 0`.
    pub nondifferentiable: bool,
}

/// Gradient of [`shift_cost`] at `alpha` with the matching held fixed.
pub fn shift_cost_gradient(mu: &CircularEmpirical, nu: &CircularEmpirical, p: u32, alpha: f64) -> ShiftGradient {
    let x = &mu.atoms;
    let y = &nu.atoms;
    let mut d_mu = vec![0.0; x.len()];
    let mut d_nu = vec![0.0; y.len()];
    let mut flag = x[0] == 0.0 || y[0] == 0.0;
    walk_pieces(x, y, alpha, |i, j, lifted, len| {
        let diff = x[i] - lifted;
        let g = match p {
            1 => {
                if diff == 0.0 {
                    flag = true;
                }
                diff.signum() * if diff == 0.0 { 0.0 } else { 1.0 }
            }
            2 => 2.0 * diff,
            _ => p as f64 * diff.abs().powi(p as i32 - 1) * diff.signum(),
        };
        d_mu[i] += len * g;
        d_nu[j] -= len * g;
    });
    if x.windows(2).any(|w| w[0] == w[1]) || y.windows(2).any(|w| w[0] == w[1]) {
        flag = true;
    }
    ShiftGradient { d_mu, d_nu, nondifferentiable: flag }
}

/// Fixed total order on measures (size, then atoms) used to orient pairs.
fn precedes(a: &CircularEmpirical, b: &CircularEmpirical) -> bool {
    match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Equal => a.atoms.iter().map(|v| v.to_bits()).lt(b.atoms.iter().map(|v| v.to_bits())),
        ord => ord.is_lt(),
    }
}

/// Result of a shift search: the optimal value and the minimizing shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftOptimum {
    pub value: f64,
    pub alpha: f64,
}

/// Minimize the shifted objective over `alpha in [-1, 1]` by bisection on the
/// sign of a central difference, falling back to golden-section search if the
/// end slopes fail to bracket a minimum.
pub fn optimal_shift(mu: &CircularEmpirical, nu: &CircularEmpirical, p: u32, tol: f64) -> Result<ShiftOptimum> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    if p == 0 {
        return Err(Error::InvalidConfig("order p must be at least 1".into()));
    }
    if mu.atoms == nu.atoms {
        return Ok(ShiftOptimum { value: 0.0, alpha: 0.0 });
    }
    if precedes(nu, mu) {
        // f_{nu,mu}(a) = f_{mu,nu}(-a); solving one fixed orientation makes
        // the result exactly symmetric
        let swapped = optimal_shift(nu, mu, p, tol)?;
        return Ok(ShiftOptimum { value: swapped.value, alpha: -swapped.alpha });
    }
    let x = &mu.atoms;
    let y = &nu.atoms;
    let grid = Grid::new(x, y);
    let f = |a: f64| grid.cost(p, a);
    let h = tol / 4.0;
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);

    let slope_lo = f(lo + h) - f(lo);
    let slope_hi = f(hi) - f(hi - h);
    if slope_lo > 0.0 || slope_hi < 0.0 {
        return golden_section(&f, lo, hi, tol);
    }

    let mut steps = 0;
    while hi - lo > tol {
        steps += 1;
        if steps > MAX_BISECTIONS {
            return Err(Error::NonConvergence(MAX_BISECTIONS));
        }
        let mid = 0.5 * (lo + hi);
        if mid - h == mid || mid + h == mid {
            // the probe offset is below float resolution at this shift
            return Err(Error::NonConvergence(steps));
        }
        if grid.slope(p, mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // the objective is piecewise linear in alpha, so extending the two
    // outer pieces to their intersection lands on the kink at the minimum
    let w = hi - lo;
    let (fl, fh) = (f(lo), f(hi));
    let sl = (fl - f(lo - w)) / w;
    let sh = (f(hi + w) - fh) / w;
    let kink = if sh > sl { (fh - fl + sl * lo - sh * hi) / (sl - sh) } else { f64::NAN };
    let mid = 0.5 * (lo + hi);
    let mut candidates = vec![lo, mid, hi];
    if kink.is_finite() && kink > lo - w && kink < hi + w {
        candidates.push(kink);
    }
    let best = candidates.into_iter().map(|a| ShiftOptimum { value: f(a), alpha: a }).min_by(|u, v| u.value.total_cmp(&v.value)).unwrap();
    Ok(best)
}

fn golden_section(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<ShiftOptimum> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut steps = 0;
    while hi - lo > tol {
        steps += 1;
        if steps > MAX_BISECTIONS {
            return Err(Error::NonConvergence(MAX_BISECTIONS));
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let best = [lo, c, d, hi].into_iter().map(|a| ShiftOptimum { value: f(a), alpha: a }).min_by(|u, v| u.value.total_cmp(&v.value)).unwrap();
    Ok(best)
}

/// `W_p^p` on the circle by binary search over the shift.
pub fn circ_w_binary_search(mu: &CircularEmpirical, nu: &CircularEmpirical, p: u32, tol: f64) -> Result<f64> {
    Ok(optimal_shift(mu, nu, p, tol)?.value)
}

/// `W_1` on the circle through the level median of `F_mu - F_nu`.
pub fn circ_w1_level_median(mu: &CircularEmpirical, nu: &CircularEmpirical) -> Result<f64> {
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if mu.atoms == nu.atoms {
        return Ok(0.0);
    }
    if precedes(nu, mu) {
        return circ_w1_level_median(nu, mu);
    }
    let x = &mu.atoms;
    let y = &nu.atoms;
    let (nf, mf) = (x.len() as f64, y.len() as f64);
    // (level of F_mu - F_nu, length of the interval carrying it)
    let mut levels: Vec<(f64, f64)> = Vec::with_capacity(x.len() + y.len() + 1);
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0.0;
    loop {
        let next = match (x.get(i), y.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => 1.0,
        };
        let level = i as f64 / nf - j as f64 / mf;
        if next > pos {
            levels.push((level, next - pos));
            pos = next;
        }
        if i == x.len() && j == y.len() {
            break;
        }
        if x.get(i) == Some(&next) {
            i += 1;
        } else {
            j += 1;
        }
    }
    let mut sorted = levels.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = sorted.iter().map(|l| l.1).sum();
    let mut acc = 0.0;
    let mut median = sorted[sorted.len() - 1].0;
    for (level, len) in &sorted {
        acc += len;
        if acc >= 0.5 * total {
            median = *level;
            break;
        }
    }
    Ok(levels.iter().map(|(level, len)| len * (level - median).abs()).sum())
}

/// Closed-form `W_2^2` between `mu` and the uniform measure on the circle.
///
/// With sorted atoms `t_i` the optimal shift is `mean(t) - 1/2`, and each
/// quantile cell contributes `(c_i^2 + 1/(12 n^2)) / n` where `c_i` is the
/// centered residual `t_i - (i + 1/2)/n - shift`.
pub fn circ_w2_vs_uniform(mu: &CircularEmpirical) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let n = mu.len();
    let nf = n as f64;
    let shift = mu.atoms.iter().sum::<f64>() / nf - 0.5;
    let sq: f64 = mu
        .atoms
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let c = t - (i as f64 + 0.5) / nf - shift;
            c * c
        })
        .sum();
    Ok(sq / nf + 1.0 / (12.0 * nf * nf))
}

/// Maximum atom count accepted by [`brute_force_circ_w`].
pub const BRUTE_FORCE_MAX_ATOMS: usize = 12;

fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// Grid oracle for equal-size measures.
///
/// For each of `grid_size` equally spaced cut points the circle is unrolled
/// at the cut, both atom sets are sorted in the unrolled order, and atoms are
/// matched by rank with circular ground distance. The minimum over cuts is
/// an upper bound on `W_p^p` and is exact once the grid resolves the gaps
/// between atoms.
pub fn brute_force_circ_w(mu: &CircularEmpirical, nu: &CircularEmpirical, p: u32, grid_size: usize) -> Result<f64> {
    let n = mu.len();
    if n != nu.len() {
        return Err(Error::SizeMismatch(n, nu.len()));
    }
    if n == 0 {
        return Err(Error::EmptyMeasure);
    }
    if n > BRUTE_FORCE_MAX_ATOMS {
        return Err(Error::TooLarge { max: BRUTE_FORCE_MAX_ATOMS, got: n });
    }
    if grid_size < 1000 {
        return Err(Error::InvalidConfig(format!("grid size must be at least 1000, got {grid_size}")));
    }
    let x = &mu.atoms;
    let y = &nu.atoms;
    let mut cache: Vec<Option<f64>> = vec![None; n];
    let mut best = f64::INFINITY;
    for g in 0..grid_size {
        let cut = g as f64 / grid_size as f64;
        let cx = x.partition_point(|&v| v < cut);
        let cy = y.partition_point(|&v| v < cut);
        let k = (cy + n - cx) % n;
        let cost = *cache[k].get_or_insert_with(|| (0..n).map(|i| pow_abs(circle_distance(x[i], y[(i + k) % n]), p)).sum::<f64>() / n as f64);
        best = best.min(cost);
    }
    Ok(best)
}
