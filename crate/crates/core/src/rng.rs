//! Counter-based deterministic randomness.
//!
//! Every draw is a pure function of (seed, counter), so a stream can be
//! replayed or audited by counter value alone. Identical (seed, draw
//! sequence) pairs yield identical values on every platform.

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub counter: u64,
}

/// SplitMix64 finalizer over seed + counter * golden-ratio increment.
fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Independent stream derived from this one's seed and a tag.
    /// Does not advance the parent counter.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream { seed: mix(self.seed, tag ^ 0xA076_1D64_78BD_642F), counter: 0 }
    }

    /// One raw 64-bit draw; advances the counter by 1.
    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.seed, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1); advances the counter by 1.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal via Box-Muller; advances the counter by 2.
    pub fn normal01(&mut self) -> f64 {
        let u1 = self.uniform01().max(1e-300);
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Bernoulli(p); advances the counter by 1.
    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CoreError::invalid("bernoulli", format!("p={p} outside [0,1]")));
        }
        Ok(self.uniform01() < p)
    }

    /// Uniform integer in [0, n); advances the counter by 1.
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        assert!(n >= 1);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates permutation of 0..n; advances the counter by n-1
    /// (n >= 2) or 0 (n == 1).
    pub fn permutation(&mut self, n: usize) -> Result<Vec<usize>> {
        if n < 1 {
            return Err(CoreError::invalid("permutation", "n must be >= 1"));
        }
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.uniform_usize(i + 1);
            p.swap(i, j);
        }
        Ok(p)
    }

    /// Beta(a, a) for a <= 1 via Johnk's algorithm (used for mixup).
    /// Advances the counter by 2 per rejection round.
    pub fn beta_symmetric(&mut self, a: f64) -> f64 {
        assert!(a > 0.0 && a <= 1.0);
        loop {
            let u = self.uniform01().max(1e-300);
            let v = self.uniform01().max(1e-300);
            let x = u.powf(1.0 / a);
            let y = v.powf(1.0 / a);
            if x + y <= 1.0 {
                return if x + y > 0.0 { x / (x + y) } else { 0.5 };
            }
        }
    }
}
