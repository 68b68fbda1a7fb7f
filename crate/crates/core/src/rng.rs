//! Seeded random streams.
//!
//! Every random decision in the crate draws from [`ChaCha8Rng`], whose output
//! is specified bit-for-bit and therefore identical on every platform.
//! Independent streams are obtained by XOR-ing the parent seed with a mixed
//! tag:
//!
//! * k-means restart `j` uses `seed ^ j`.
//! * learning-curve cell (grid index `i`, repeat `j`) uses
//!   `seed ^ mix(i, j)` where `mix(i, j) = splitmix64((i << 32) | j)`.
//! * named pipeline stages use `seed ^ splitmix64(tag)` via [`derive`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixing function for a (grid index, repeat) cell.
pub fn mix(i: u32, j: u32) -> u64 {
    splitmix64((u64::from(i) << 32) | u64::from(j))
}

pub fn derive(seed: u64, tag: u64) -> u64 {
    seed ^ splitmix64(tag)
}
