//! Seedable random streams.
//!
//! Every stochastic component owns a [`RandomStream`]. Worker streams are
//! derived from a master seed with [`RandomStream::split`]: stream `i` of
//! master seed `s` is seeded with `splitmix64(s ^ splitmix64(i + 1))`, so the
//! schedule does not depend on how many workers run or in which order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    seed: u64,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream `index` of this stream's seed.
    pub fn split(&self, index: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Number of 32-bit words consumed so far; with the seed this fully
    /// determines the stream state.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Stream of `seed` fast-forwarded to `position`.
    pub fn at_position(seed: u64, position: u128) -> Self {
        let mut s = Self::new(seed);
        s.rng.set_word_pos(position);
        s
    }
}
