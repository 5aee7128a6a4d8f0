//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha20 keystream (RFC 8439 block function, 20 rounds)
//! keyed by a 256-bit key. The key of a root stream is
//! `SHA-256("sve-seed" || seed_le_u64)`; the key of a child stream is
//! `SHA-256("sve-split" || parent_key || tag)`. Children are derived from the
//! parent's key, never from its position, so splitting does not depend on how
//! many draws the parent has already produced.
//!
//! Uniform draws take the top 53 bits of one `u64` word. Normal draws use the
//! cosine branch of Box–Muller on two uniforms and discard the sine branch, so
//! every normal consumes exactly two words.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Identifier written into checkpoints and result files.
pub const ALGORITHM_ID: &str = "chacha20-sha256split-v1";

#[derive(Clone, Debug)]
pub struct Rng {
    key: [u8; 32],
    stream: ChaCha20Rng,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"sve-seed");
        h.update(seed.to_le_bytes());
        Self::from_key(h.finalize().into())
    }

    pub fn from_key(key: [u8; 32]) -> Self {
        Rng {
            key,
            stream: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn algorithm_id(&self) -> &'static str {
        ALGORITHM_ID
    }

    /// Independent child stream named by `tag`.
    pub fn split(&self, tag: &str) -> Rng {
        let mut h = Sha256::new();
        h.update(b"sve-split");
        h.update(self.key);
        h.update(tag.as_bytes());
        Rng::from_key(h.finalize().into())
    }

    /// Shorthand for `split` with a numeric suffix, e.g. member or epoch index.
    pub fn split_indexed(&self, tag: &str, index: u64) -> Rng {
        self.split(&format!("{tag}/{index}"))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.stream.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)` by rejection sampling; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}
