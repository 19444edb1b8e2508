//! Exact linear assignment by the Hungarian method with potentials, and the
//! spherical 2-Wasserstein distance it yields for equal-size samples.

use crate::error::{Error, Result};
use crate::sphere::UnitVector;

/// Largest sample size accepted by [`exact_sphere_w2`].
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

/// Minimum-cost perfect matching of a square cost matrix given row-major.
///
/// Returns `assignment[row] = column`. Runs in `O(n^3)`.
pub fn hungarian(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::ShapeMismatch(format!("cost matrix has {} entries, expected {}", cost.len(), n * n)));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidConfig("assignment costs must be finite".into()));
    }
    // 1-based potentials over rows (u) and columns (v); column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Exact `W_2` between equal-size empirical measures on the sphere with
/// squared geodesic ground cost `arccos^2 <x, y>`.
pub fn exact_sphere_w2(x: &[UnitVector], y: &[UnitVector]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::SizeMismatch(n, y.len()));
    }
    if n == 0 {
        return Err(Error::EmptyMeasure);
    }
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::TooLarge { max: MAX_ASSIGNMENT_SIZE, got: n });
    }
    let cost: Vec<f64> = x.iter().flat_map(|a| y.iter().map(move |b| a.geodesic(b).powi(2))).collect();
    let assignment = hungarian(&cost, n)?;
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}
