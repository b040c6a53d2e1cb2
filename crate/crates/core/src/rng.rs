//! Counter-based deterministic random number generation.
//!
//! The generator is SplitMix64 in its closed, counter-indexed form. The n-th
//! output (counting from 0) of a stream with seed `s` is
//!
//! ```text
//! out(s, n) = mix(s + (n + 1) * 0x9E3779B97F4A7C15)     (wrapping)
//! mix(x):  x ^= x >> 30;  x *= 0xBF58476D1CE4E5B9       (wrapping)
//!          x ^= x >> 27;  x *= 0x94D049BB133111EB       (wrapping)
//!          x ^= x >> 31
//! ```
//!
//! Every draw advances the counter by exactly one, so `(seed, counter)` fully
//! identifies the next value on every platform. Floats are derived from the
//! top 53 bits: `u = (out >> 11) * 2^-53`, giving `u ∈ [0, 1)`.
//!
//! There is no other source of randomness anywhere in this workspace.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A position in a deterministic random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Derives an independent child stream. The child's seed is
    /// `mix(seed ^ mix(stream_id + GAMMA))`, counter 0.
    pub fn derive(&self, stream_id: u64) -> Self {
        Self::new(mix(self.seed ^ mix(stream_id.wrapping_add(GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform draw from `[0, 1)` with 53-bit resolution.
    pub fn next_unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` via the multiply-shift reduction
    /// `(next_u64() * bound) >> 64`. `bound` must be non-zero.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below requires a positive bound");
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Standard normal draw via Box-Muller; consumes exactly two uniforms and
    /// keeps only the cosine branch so the stream position stays predictable.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_unit_f64();
        let u2 = self.next_unit_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            p.swap(i, j);
        }
        p
    }

    /// Draws `k` distinct indices from `0..n` by partial Fisher-Yates, then
    /// sorts them so callers see a canonical order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

/// Fills a tensor of the given shape with uniform draws from `[lo, hi)`,
/// advancing `state` by exactly `product(shape)` positions.
pub fn rng_uniform(state: &mut RngState, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(Error::Argument(format!(
            "uniform range requires lo < hi, got [{lo}, {hi})"
        )));
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite("uniform range bounds".into()));
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let u = state.next_unit_f64();
        let mut v = lo + u * (hi - lo);
        // Rounding can land exactly on hi for extreme ranges; clamp to the
        // largest representable value below it to keep the half-open contract.
        if v >= hi {
            v = f64::from_bits(hi.to_bits() - 1).max(lo);
        }
        data.push(v);
    }
    Tensor::new(shape.to_vec(), data)
}
