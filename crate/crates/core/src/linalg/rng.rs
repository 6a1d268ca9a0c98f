use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::Matrix;
use crate::error::{Error, Result};

/// Deterministic random stream: xoshiro256** seeded through SplitMix64.
///
/// Everything built on top of it (uniforms, Box–Muller normals, Fisher–Yates
/// shuffles) is implemented here, so the output for a given seed is fixed
/// across platforms and dependency upgrades of `rand`.
#[derive(Clone, Debug)]
pub struct SeededRng {
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream for a named purpose (init, shuffling, dropout, ...)
    /// derived from one user seed.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mixed = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
        Self::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased uniform integer in `0..n` by rejection. `n` must be > 0.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via the Box–Muller transform.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn randn(&mut self, rows: usize, cols: usize, mu: f64, sigma: f64) -> Result<Matrix> {
        if !sigma.is_finite() || sigma < 0.0 || !mu.is_finite() {
            return Err(Error::Domain(format!(
                "randn needs finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"
            )));
        }
        let data = (0..rows * cols).map(|_| mu + sigma * self.normal()).collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            idx.swap(i, j);
        }
        idx
    }
}
