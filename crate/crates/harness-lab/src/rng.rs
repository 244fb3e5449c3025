//! Deterministic seed derivation.
//!
//! Every random object in the crate is drawn from a ChaCha8 stream whose key
//! is derived from a user seed plus a context label (site coordinates,
//! replica index, ...). Substreams are therefore independent of iteration
//! order and reproducible bit-for-bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, stable across platforms.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix a seed with one label word.
pub fn mix(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label))
}

/// Key a generator by seed plus site coordinates.
pub fn site_rng(seed: u64, site: &[i32]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &c in site {
        h = splitmix64(h ^ (c as i64 as u64));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Key a generator by seed plus a replica (or other scalar) label.
pub fn stream_rng(seed: u64, label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, label))
}
