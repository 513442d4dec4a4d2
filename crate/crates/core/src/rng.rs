//! Seed plumbing. Every random choice in the crate flows from a caller
//! seed through a counter-based generator (ChaCha8), so any stage can be
//! re-run in isolation and reproduce its output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; avalanche for seed derivation.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of labels.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut acc = mix64(base);
    for &p in parts {
        acc = mix64(acc ^ p);
    }
    acc
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
