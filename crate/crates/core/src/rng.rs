//! Seeded randomness.
//!
//! Every stochastic choice in the crate draws from a `ChaCha8Rng` seeded
//! explicitly by the caller; the tiny distribution helpers below are
//! hand-rolled so that sampled values are reproducible bit-for-bit across
//! platforms and crate versions.

use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};

use crate::math;

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derive an independent child generator (used to give each run phase its
/// own stream so adding draws to one phase does not shift another).
pub fn derive(rng: &mut Rng) -> Rng {
    Rng::seed_from_u64(rng.next_u64())
}

/// Draw a raw 64-bit seed for a child stream.
pub fn next_seed(rng: &mut Rng) -> u64 {
    rng.next_u64()
}

/// Uniform in [0, 1) with 53 random bits.
pub fn uniform01(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Uniform in [lo, hi).
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut Rng) -> f64 {
    let u1 = 1.0 - uniform01(rng); // (0, 1]
    let u2 = uniform01(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
}

/// Uniform integer in [0, n). Modulo bias is negligible for the desk-scale
/// `n` used here (n << 2^32).
pub fn below(rng: &mut Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// `k` distinct indices sampled uniformly from 0..n (order randomized).
pub fn sample_indices(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut all: Vec<usize> = (0..n).collect();
    shuffle(rng, &mut all);
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_streams() {
        let mut a = from_seed(7);
        let mut b = from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = from_seed(1);
        for _ in 0..1000 {
            let x = uniform(&mut rng, -2.0, 2.0);
            assert!((-2.0..2.0).contains(&x));
        }
    }

    #[test]
    fn normal_moments_roughly_standard() {
        let mut rng = from_seed(2);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn sample_indices_distinct() {
        let mut rng = from_seed(3);
        let idx = sample_indices(&mut rng, 50, 20);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 20);
    }
}
