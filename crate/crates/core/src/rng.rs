//! Seed derivation and sampling helpers.
//!
//! All randomness in the crate flows through [`ChaCha8Rng`] streams seeded
//! from explicit `u64` values, so artifacts are reproducible across runs,
//! platforms and worker counts. Sub-seeds (per record, per shard, per
//! epoch) are derived with splitmix64 so that streams are independent.

use rand::Rng;
use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// splitmix64 mixing step. Small, well-dispersed, stable by construction.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a base seed and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_mul(0xa076_1d64_78bd_642f)))
}

/// A deterministic RNG for the given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A deterministic RNG for a derived (seed, stream) pair.
pub fn rng_for_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Standard normal sample via Box-Muller; two uniform draws per call.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // u1 in (0, 1] to keep the log finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform sample in `[lo, hi]`; `lo == hi` returns the point exactly.
pub fn uniform_in<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo <= hi);
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}
