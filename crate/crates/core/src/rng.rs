//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! whose key is derived from a root seed, a stream name and an index, so that
//! work split across batches or workers sees the same numbers as a serial run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named substreams used across the pipeline.
pub mod stream {
    pub const DATA: &str = "data";
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
    pub const ATTACK: &str = "attack";
    pub const SPLIT: &str = "split";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `(root, name, index)`.
pub fn derive(root: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the stream name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(index))
}

pub fn stream_rng(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, name, index))
}
