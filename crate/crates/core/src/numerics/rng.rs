use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Named sub-streams derived from one experiment seed. Each consumer draws from
/// its own stream so that, say, changing the selection policy never perturbs
/// weight initialisation or batch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Shuffle = 3,
    Selection = 4,
    Probe = 5,
    Subsample = 6,
    Audit = 7,
}

/// Seeded, platform-independent generator (ChaCha8).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for `(seed, stream, index)`; `index` is typically a
    /// training step so that a resumed run replays the same draws.
    pub fn derive(seed: u64, stream: Stream, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((stream as u64) << 32) ^ index);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xa: Vec<f64> = (0..16).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..16).map(|_| b.normal()).collect();
        assert_eq!(xa, xb);
        assert_eq!(a.word_pos(), b.word_pos());
    }

    #[test]
    fn streams_are_independent() {
        let mut a = Rng::derive(1, Stream::Init, 0);
        let mut b = Rng::derive(1, Stream::Shuffle, 0);
        let mut c = Rng::derive(1, Stream::Shuffle, 1);
        let (x, y, z) = (a.uniform(0.0, 1.0), b.uniform(0.0, 1.0), c.uniform(0.0, 1.0));
        assert!(x != y && y != z);
    }

    #[test]
    fn frozen_first_draws() {
        // Pinned so that an upstream algorithm change shows up as a test failure
        // rather than as silently different experiments.
        assert_eq!(Rng::new(7).uniform(0.0, 1.0).to_bits(), 0x3fc432a99a11eba0);
        assert_eq!(
            Rng::derive(7, Stream::Data, 3).uniform(0.0, 1.0).to_bits(),
            0x3fd3c0e5e315a478
        );
    }
}
