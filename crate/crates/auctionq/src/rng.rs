//! Seed plumbing.
//!
//! Every stochastic operation in this crate takes either an explicit seed or
//! an explicit RNG so that parallel workers get independent streams and every
//! experiment replays bit-identically. `ChaCha8Rng` is used throughout because
//! its output is stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG type used across the crate.
pub type Rng = ChaCha8Rng;

/// SplitMix64 step; good avalanche, used to derive sub-seeds from a base seed.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a sequence of tags into a new seed.
///
/// Used wherever one logical seed has to fan out into independent streams
/// (per robot, per task, per sample index) without correlation.
pub fn mix(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0x51_7cc1_b727_220a95);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// A seeded RNG stream.
pub fn stream(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A sub-stream derived from a base seed and tags.
pub fn substream(base: u64, tags: &[u64]) -> Rng {
    stream(mix(base, tags))
}
