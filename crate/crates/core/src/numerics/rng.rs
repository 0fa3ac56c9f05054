//! Counter-based deterministic random streams.
//!
//! Every stream is a ChaCha8 keystream addressed by `(seed, stream id, word
//! position)`. Splitting derives a fresh stream id from the parent's id and a
//! caller-supplied key, so parallel runs never share mutable state and the
//! draws of one child do not depend on how many draws its siblings made.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn mix64(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position in the keystream, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Jumps to an absolute keystream position.
    pub fn set_counter(&mut self, words: u128) {
        self.inner.set_word_pos(words);
    }

    /// Derives an independent child stream. The child depends only on this
    /// stream's identity and `key`, not on its current counter.
    pub fn split(&self, key: u64) -> Self {
        let stream = mix64(self.stream ^ mix64(key.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Self::with_stream(self.seed, stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Tensor of i.i.d. standard normal draws.
    pub fn gaussian(&mut self, shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| self.normal()).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in random order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct items from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Standard-normal tensor drawn from `rng`.
pub fn gaussian_sample(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    rng.gaussian(shape)
}
