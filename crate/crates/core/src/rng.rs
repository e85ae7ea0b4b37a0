//! Seeded random streams.
//!
//! Every random decision in a run (search sampling, fold assignment, weight
//! init, shuffling, dropout) draws from a [`Rng`] whose seed is derived from
//! one master seed with [`derive_seed`], so any component can be re-run in
//! isolation.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

/// Stream tags used with [`derive_seed`].
pub mod stream {
    pub const SEARCH: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const ABLATION: u64 = 6;
    pub const OOV: u64 = 7;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a path of stream tags / indices.
///
/// Each path component is folded in with one splitmix64 round, so
/// `derive_seed(s, &[a, b])` differs from `derive_seed(s, &[b, a])`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A reproducible random stream (ChaCha8, portable across platforms).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A new independent stream derived from this stream's seed.
    pub fn fork(&self, path: &[u64]) -> Rng {
        Rng::new(derive_seed(self.seed, path))
    }

    /// Uniform draw on the closed interval `[lo, hi]`.
    pub fn uniform<T: Real>(&mut self, lo: T, hi: T) -> T {
        self.inner.gen_range(lo..=hi)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform index in `0..n`. Draws a `u64` so the stream does not depend on
    /// the platform's pointer width.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below called with n = 0");
        self.inner.gen_range(0..n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
