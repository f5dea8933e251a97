//! Seeding conventions.
//!
//! All randomness goes through ChaCha8 (a counter-based stream cipher
//! generator). A sampler seeded with `seed` draws channel `c` from stream
//! `c + 1` of `ChaCha8Rng::seed_from_u64(seed)`; stream 0 is left for
//! auxiliary draws. Derived seeds come from SplitMix64 so that a master
//! seed expands to independent, order-free per-run seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for `channel` of a sampler seeded with `seed`.
pub fn channel_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64 + 1);
    rng
}

/// Generator for auxiliary draws (stream 0).
pub fn aux_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One SplitMix64 output for input `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `(a, b)` under `master`: `splitmix(splitmix(master ^ a) ^ b)`.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(a)) ^ b)
}
