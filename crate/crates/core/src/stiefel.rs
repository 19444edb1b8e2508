//! Uniform sampling of 2-frames on the Stiefel manifold `V_{d,2}`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SphereRng};
use crate::sphere::{dot, StiefelFrame};

const BREAKDOWN_NORM: f64 = 1e-12;
const MAX_RESAMPLES: usize = 8;

/// `L` frames drawn from one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub frames: Vec<StiefelFrame>,
    pub seed: u64,
    pub dim: usize,
}

impl FrameBatch {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Orthonormalize a Gaussian `d x 2` matrix by modified Gram-Schmidt.
///
/// `R` has a positive diagonal by construction, which makes the resulting
/// `Q` Haar-distributed on `V_{d,2}`. Returns `None` if a column collapses.
fn gram_schmidt(mut z0: Vec<f64>, mut z1: Vec<f64>) -> Option<StiefelFrame> {
    let r00 = dot(&z0, &z0).sqrt();
    if !(r00 > BREAKDOWN_NORM) {
        return None;
    }
    z0.iter_mut().for_each(|v| *v /= r00);
    let r01 = dot(&z0, &z1);
    z1.iter_mut().zip(&z0).for_each(|(b, a)| *b -= r01 * a);
    let r11 = dot(&z1, &z1).sqrt();
    if !(r11 > BREAKDOWN_NORM) {
        return None;
    }
    z1.iter_mut().for_each(|v| *v /= r11);
    // second pass keeps |U^T U - I| at machine precision for large d
    let c = dot(&z0, &z1);
    z1.iter_mut().zip(&z0).for_each(|(b, a)| *b -= c * a);
    let r = dot(&z1, &z1).sqrt();
    z1.iter_mut().for_each(|v| *v /= r);
    Some(StiefelFrame::from_orthonormal(z0, z1))
}

pub fn sample_frame<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<StiefelFrame> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    for _ in 0..=MAX_RESAMPLES {
        let z0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let z1: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(f) = gram_schmidt(z0, z1) {
            return Ok(f);
        }
    }
    Err(Error::GramSchmidtBreakdown(MAX_RESAMPLES))
}

/// Draw `l` i.i.d. uniform frames in dimension `d` from `rng`.
pub fn sample_frames_with<R: Rng + ?Sized>(d: usize, l: usize, rng: &mut R) -> Result<Vec<StiefelFrame>> {
    if l == 0 {
        return Err(Error::InvalidConfig("number of projections must be at least 1".into()));
    }
    (0..l).map(|_| sample_frame(d, rng)).collect()
}

/// Draw a seeded batch of `l` frames. Equal seeds give identical batches.
pub fn sample_frames(d: usize, l: usize, seed: u64) -> Result<FrameBatch> {
    let mut rng: SphereRng = rng_from_seed(seed);
    let frames = sample_frames_with(d, l, &mut rng)?;
    Ok(FrameBatch { frames, seed, dim: d })
}

/// Re-orthonormalize `frame` after nudging its first column towards `x`.
///
/// Used once when `x` is orthogonal to the frame plane.
pub(crate) fn jitter_towards(frame: &StiefelFrame, x: &[f64], scale: f64) -> Result<StiefelFrame> {
    let z0: Vec<f64> = frame.first().iter().zip(x).map(|(u, xi)| u + scale * xi).collect();
    gram_schmidt(z0, frame.second().to_vec()).ok_or(Error::GramSchmidtBreakdown(0))
}
