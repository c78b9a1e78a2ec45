//! Seed derivation and counter-based random streams.
//!
//! Every random draw in an experiment is keyed by a tuple of integers
//! (base seed, repetition, policy, visit count, ...) mixed through
//! SplitMix64, so draws do not depend on the order in which other draws
//! happen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every seeded stream in the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a base seed with an ordered list of integer keys.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(mix64(base), |acc, &k| mix64(acc ^ mix64(k.wrapping_add(GOLDEN))))
}

/// Fresh generator for the stream identified by `(base, keys)`.
pub fn stream(base: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, keys))
}

/// Fixed labels separating the independent streams of one run.
pub mod domain {
    pub const TASK: u64 = 1;
    pub const RETURNS: u64 = 2;
    pub const SELECTION: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    pub const OPE_SUBSET: u64 = 5;
    pub const PROBE_STATES: u64 = 6;
}
