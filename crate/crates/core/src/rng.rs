//! Portable seeded random source.
//!
//! Every stochastic choice in the crate (series generation, parameter
//! initialisation, minibatch shuffling) draws from [`SeededRng`], so results
//! can be reproduced from another language with a few dozen lines of code:
//!
//! * state: xoshiro256** seeded by running SplitMix64 four times from the
//!   64-bit seed (`rand_xoshiro::Xoshiro256StarStar::seed_from_u64`);
//! * uniform `[0, 1)`: `(next_u64() >> 11) * 2^-53`;
//! * standard normal: Box–Muller cosine branch, `u1 = 1 - uniform()`,
//!   `u2 = uniform()`, `sqrt(-2 ln u1) * cos(2π u2)`, one draw per pair;
//! * geometric durations: inverse CDF, see [`SeededRng::geometric`].

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a named sub-task, so that e.g. the
    /// MLP and LSTM initialisations do not depend on the order models are fitted in.
    pub fn derived(seed: u64, stream: &str) -> Self {
        // FNV-1a over the stream label, folded into the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in stream.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Self::new(seed ^ h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Geometric on `{1, 2, ...}` with the given mean (success probability `1/mean`).
    ///
    /// Computed as `ceil(ln(u) / ln(1 - p))` with `u = 1 - uniform()` in `(0, 1]`,
    /// clamped below at 1.
    pub fn geometric(&mut self, mean: f64) -> usize {
        if mean <= 1.0 {
            return 1;
        }
        let p = 1.0 / mean;
        let u = 1.0 - self.uniform();
        let k = (u.ln() / (1.0 - p).ln()).ceil();
        if k < 1.0 {
            1
        } else {
            k as usize
        }
    }

    /// Uniform integer in `0..n` by multiply-shift of a 64-bit draw.
    /// The bias is at most `n / 2^64`, far below anything observable here.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle, iterating from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
