//! Seed derivation. Every random draw in the crate comes from a
//! `ChaCha8Rng` seeded through [`derive_seed`], so results depend only on
//! the master seed and the stream index, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix64(mix64(master) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn stream(master: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
