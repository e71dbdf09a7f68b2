//! Seeded random streams.
//!
//! All randomness goes through [`SeededRng`], a ChaCha8 stream cipher
//! generator (`rand_chacha::ChaCha8Rng`). ChaCha8 output is defined by the
//! cipher alone, so a given `(seed, stream)` pair yields the same sequence on
//! every platform. Normal variates use `rand_distr::StandardNormal`
//! (ziggurat), which is also platform independent.
//!
//! Independent sub-streams are obtained with [`SeededRng::split`]: the child
//! shares the parent's key and uses a distinct 64-bit ChaCha stream id, so
//! children never overlap with each other or with the parent.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator on ChaCha stream `stream + 1` of the same key.
    pub fn split(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize, std_dev: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| std_dev * self.standard_normal())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// LeCun normal initialization: i.i.d. `N(0, 1/fan_in)` entries.
pub fn lecun_normal_init(
    rng: &mut SeededRng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Result<Matrix> {
    if fan_in == 0 {
        return Err(Error::invalid("lecun_normal_init: fan_in must be >= 1"));
    }
    Ok(rng.normal_matrix(rows, cols, (1.0 / fan_in as f64).sqrt()))
}
