//! Seeding discipline.
//!
//! All randomness flows from ChaCha8 streams (`rand_chacha`), which produce
//! the same sequence on every platform. Child seeds are derived from a parent
//! seed and a stream tag with the SplitMix64 finalizer, so a run seed can be
//! split into independent streams for each environment, agent and episode
//! without the streams overlapping in practice.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 output function applied to `seed ^ tag * golden`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a path of tags, e.g. `[run, update, env]`.
pub fn derive_path(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(seed, |s, &t| derive_seed(s, t))
}

pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_path(seed, tags))
}
