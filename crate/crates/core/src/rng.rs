//! Deterministic hierarchical random streams.
//!
//! Every sampling site is addressed by a root seed plus a path of
//! (label, index) pairs, e.g. seed 7 -> ("sweep", 3) -> ("u", 41). The
//! address alone determines the generator state, so parallel workers that
//! each draw from their own substream produce bitwise-identical results
//! regardless of scheduling or worker count. Identical addresses yield
//! identical sequences; distinct addresses yield independent-looking ones.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The concrete generator behind every stream.
pub type StreamRng = ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path: Vec<(String, u64)>,
    state: u64,
}

impl RngStream {
    pub fn root(seed: u64) -> Self {
        RngStream { seed, path: Vec::new(), state: splitmix64(seed ^ 0x6A09E667F3BCC908) }
    }

    /// Derives the substream at (label, index) under this stream.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut state = splitmix64(self.state ^ fnv1a64(label.as_bytes()));
        state = splitmix64(state ^ index);
        let mut path = self.path.clone();
        path.push((label.to_string(), index));
        RngStream { seed: self.seed, path, state }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Instantiates a fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        ChaCha12Rng::seed_from_u64(self.state)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
