//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`
//! derived with [`derive`], so that work split across samples or workers
//! reproduces the serial run bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent draws made from one user seed apart.
pub mod stream {
    pub const OPERATOR: u64 = 0x0A;
    pub const TARGET: u64 = 0x0B;
    pub const NOISE: u64 = 0x0C;
    pub const WEIGHTS: u64 = 0x0D;
    pub const SHUFFLE: u64 = 0x0E;
    pub const PROBE: u64 = 0x0F;
    pub const INPUT: u64 = 0x10;
    pub const EVAL: u64 = 0x11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index)
}

pub fn rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, index))
}
