//! Seed streams.
//!
//! Every random quantity is drawn from a ChaCha stream whose seed is derived
//! from the master seed and a path of integers (split id, stream tag, tree
//! index). Results therefore do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_LEARNER: u64 = 2;
pub const STREAM_BOOT_SE: u64 = 3;
pub const STREAM_BOOT_THRESHOLD: u64 = 4;
pub const STREAM_CV: u64 = 5;
pub const STREAM_DGP: u64 = 6;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a child seed from a parent seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
