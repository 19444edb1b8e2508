//! Seeded random streams.
//!
//! Every stochastic routine takes its generator explicitly. Independent
//! sub-streams (per flow step, per sweep repeat) are derived from a master
//! seed with a SplitMix64 finalizer so that runs are reproducible and
//! parallel callers never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SphereRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SphereRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive the seed of sub-stream `stream` from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
