//! Seed derivation for reproducible, independently-streamed randomness.
//!
//! Every random source in the workspace is a `ChaCha12Rng` keyed by a seed
//! derived from a single root seed plus a stream tag. Derivation uses two
//! rounds of the SplitMix64 finalizer, which is enough to decorrelate
//! adjacent tags.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `root` and a stream `tag`.
pub fn derive(root: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(root ^ 0x6a09_e667_f3bc_c908).wrapping_add(splitmix64(tag)))
}

/// Derive a child seed from `root` and a two-level stream tag.
pub fn derive2(root: u64, a: u64, b: u64) -> u64 {
    derive(derive(root, a), b)
}

/// A seeded generator for the stream `(root, tag)`.
pub fn stream(root: u64, tag: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(root, tag))
}

/// A seeded generator for the stream `(root, a, b)`.
pub fn stream2(root: u64, a: u64, b: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive2(root, a, b))
}
