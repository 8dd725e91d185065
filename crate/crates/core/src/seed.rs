//! Deterministic seed derivation.
//!
//! Every random decision in a run draws from a ChaCha8 stream whose seed is
//! derived from `(run seed, stream, index)`:
//!
//! ```text
//! derive_seed(run, stream, index) = mix64(mix64(run ^ (stream as u64) * 0x9E37_79B9_7F4A_7C15) ^ index)
//! ```
//!
//! where `mix64` is the SplitMix64 finaliser. Child `i` therefore always gets
//! the same mask, batch order and bagging subset regardless of the order or
//! thread children are processed on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ParentInit = 1,
    ParentShuffle = 2,
    Mask = 3,
    ChildShuffle = 4,
    Bagging = 5,
    Augment = 6,
    Baseline = 7,
    Landscape = 8,
    EvalSubset = 9,
}

pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(run: u64, stream: Stream, index: u64) -> u64 {
    mix64(mix64(run ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
