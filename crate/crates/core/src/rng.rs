//! Counter-based random streams.
//!
//! Every random draw in a run is addressed by a tuple of tags (root seed,
//! agent, episode, step, state, action, ...). The tuple is hashed into a
//! ChaCha8 key, so the draw at a given address does not depend on how many
//! other draws happened before it or on which worker performed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags used to keep sub-streams of different consumers disjoint.
pub mod tag {
    pub const ENV: u64 = 0x656e_7600;
    pub const AGENT: u64 = 0x6167_6e74;
    pub const MONTE_CARLO: u64 = 0x6d63_0000;
    pub const INSTANCE: u64 = 0x696e_7374;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a tag path into a single 64-bit identifier.
pub fn mix(tags: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3u64;
    let mut acc = splitmix64(&mut state);
    for &t in tags {
        state ^= t;
        acc = acc.rotate_left(17) ^ splitmix64(&mut state);
    }
    acc
}

/// Returns the stream addressed by `tags`.
pub fn substream(tags: &[u64]) -> StreamRng {
    let mut state = mix(tags);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// A prefix of tags that can be extended to address child streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix(&[seed]))
    }

    pub fn child(self, tag: u64) -> Self {
        StreamKey(mix(&[self.0, tag]))
    }

    pub fn children(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |k, &t| k.child(t))
    }

    pub fn rng(self) -> StreamRng {
        substream(&[self.0])
    }
}
