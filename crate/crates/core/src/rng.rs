//! Seeded random streams.
//!
//! Every stochastic decision in a run (initialization, shuffling, tie-breaking,
//! reinitialization) draws from a stream forked off the run seed by a label, so
//! the outcome of one decision never depends on how many numbers another one
//! consumed.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct Rng {
    key: [u8; 32],
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::from_key(ChaCha8Rng::seed_from_u64(seed).get_seed())
    }

    fn from_key(key: [u8; 32]) -> Self {
        Rng {
            key,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent substream keyed by `label`. Depends only on the key this
    /// stream was created with, never on how far it has been advanced.
    pub fn fork(&self, label: &str) -> Rng {
        let digest = Sha256::new()
            .chain_update(self.key)
            .chain_update(label.as_bytes())
            .finalize();
        Self::from_key(digest.into())
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
