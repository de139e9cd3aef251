//! Seeded randomness. Every stochastic choice in the crate draws from a
//! SplitMix64 stream so runs are reproducible across platforms.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_xoshiro::SplitMix64;

pub type Rng = SplitMix64;

pub fn seeded(seed: u64) -> Rng {
    SplitMix64::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    items.shuffle(rng);
}
