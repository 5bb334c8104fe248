//! Seed derivation and the counter-based uniform stream used by residuals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a parent seed and a label/index pair.
pub fn derive(seed: u64, label: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(label)) ^ index)
}

pub fn substream(seed: u64, label: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label, index))
}

/// Uniform draw on the open interval (0, 1) keyed by `(seed, row_id)`.
///
/// The same row and seed always yield the same value regardless of which
/// residual regime asks for it.
pub fn row_uniform(seed: u64, row_id: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row_id as u64);
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}
