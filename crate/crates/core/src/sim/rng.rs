//! Seeded randomness.
//!
//! Every random draw in a run comes from a ChaCha8 stream (RFC 7539 block
//! function, 8 rounds, as implemented by `rand_chacha`). Independent
//! substreams are keyed by a purpose label and a node id so that adding a
//! draw for one purpose never shifts the draws of another:
//!
//! ```text
//! key   = splitmix64(seed ^ fnv1a64(purpose)) ^ splitmix64(node + 1)
//! state = ChaCha8Rng::seed_from_u64(key)
//! ```
//!
//! `seed_from_u64` expands the key with PCG32 as documented by `rand_core`,
//! so the sequence is identical across runs and platforms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::NodeId;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream_key(seed: u64, purpose: &str, node: NodeId) -> u64 {
    splitmix64(seed ^ fnv1a64(purpose.as_bytes())) ^ splitmix64(node.0.wrapping_add(1))
}

pub fn substream(seed: u64, purpose: &str, node: NodeId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_key(seed, purpose, node))
}

/// Lazily created substreams of one run seed.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    streams: BTreeMap<(&'static str, NodeId), ChaCha8Rng>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&mut self, purpose: &'static str, node: NodeId) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams
            .entry((purpose, node))
            .or_insert_with(|| substream(seed, purpose, node))
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self, purpose: &'static str, node: NodeId) -> f64 {
        self.stream(purpose, node).gen::<f64>()
    }
}
