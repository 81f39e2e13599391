//! Counter-based random streams.
//!
//! Every uniform draw is addressed by `(key, stream, index)`: the key is a
//! master seed plus a derivation path, the stream usually identifies a table
//! column, and the index is the row. Draws are therefore independent of
//! evaluation order and thread count. Streams are ChaCha8 streams; an index
//! maps to a fixed 64-bit word position, so seeking is O(1).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit identifier of a name (FNV-1a followed by a finalizer).
pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h)
}

/// Seed of an independent child computation, e.g. one of several queries.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(GOLDEN)))
}

/// Master seed plus derivation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    seed: u64,
    path: u64,
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        RngKey { seed, path: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child key for a labelled sub-computation.
    pub fn derive(self, tag: u64) -> Self {
        RngKey {
            seed: self.seed,
            path: mix64(self.path ^ mix64(tag.wrapping_add(GOLDEN))),
        }
    }

    pub fn derive_name(self, tag: &str) -> Self {
        self.derive(stream_id(tag))
    }

    /// Uniform stream number `stream`, positioned at index 0.
    pub fn stream(self, stream: u64) -> UniformStream {
        let mut bytes = [0u8; 32];
        let mut state = self.seed ^ mix64(self.path.wrapping_add(0x5851_F42D_4C95_7F2D));
        for chunk in bytes.chunks_exact_mut(8) {
            state = state.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(stream);
        UniformStream { rng }
    }

    /// The single uniform at `(stream, index)`.
    pub fn uniform_at(self, stream: u64, index: u64) -> f64 {
        let mut s = self.stream(stream);
        s.seek(index);
        s.next_open01()
    }
}

/// Sequential reader over one stream; index `i` is always the same number.
#[derive(Debug, Clone)]
pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    /// Position the stream so the next draw is the one at `index`.
    pub fn seek(&mut self, index: u64) {
        self.rng.set_word_pos(u128::from(index) * 2);
    }

    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    pub fn next_open01(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `0..bound` (bound > 0), by rejection.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let v = self.rng.next_u64();
            if v <= zone {
                return v % bound;
            }
        }
    }
}
