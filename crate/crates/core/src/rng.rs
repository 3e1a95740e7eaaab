//! Seeded Gaussian streams.
//!
//! Samples come from a Box-Muller transform over ChaCha8, a counter-based
//! 64-bit-seeded generator. Streams are reproducible per seed within this
//! crate; other implementations are not expected to match them sample by
//! sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
    mean: f64,
    std_dev: f64,
}

impl GaussianStream {
    pub fn new(seed: u64, mean: f64, variance: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
            mean,
            std_dev: variance.max(0.0).sqrt(),
        }
    }

    pub fn standard(seed: u64) -> Self {
        Self::new(seed, 0.0, 1.0)
    }

    fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln(u1) finite
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn sample(&mut self) -> f64 {
        self.mean + self.std_dev * self.standard_normal()
    }

    pub fn samples(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample()).collect()
    }

    /// Uniform sample in `[lo, hi)`, drawn from the same underlying generator.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }
}

/// Derive a decorrelated child seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
