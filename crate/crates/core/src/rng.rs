//! Seeded random streams.
//!
//! Every stream is a ChaCha20 keystream. The key of a stream is derived from
//! its parent key and a child index with a SplitMix64 finalizer, so a child
//! stream is a pure function of `(root seed, path of indices)` and never
//! depends on how many draws its parent has already produced.
//!
//! Continuous draws go through the inverse CDF: one uniform per variate,
//! which keeps fixtures reproducible across implementations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream identified by a 64-bit key.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// The key this stream was created from.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Independent child stream; does not advance `self`.
    pub fn child(&self, index: u64) -> Self {
        Self::new(splitmix64(self.key ^ splitmix64(index.wrapping_add(1))))
    }

    /// Child stream addressed by a path of indices.
    pub fn descend(&self, path: &[u64]) -> Self {
        path.iter().fold(self.clone(), |s, &i| s.child(i))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random bits, offset by half an ulp so 0 and 1 are never produced.
        let bits = self.rng.random::<u64>() >> 11;
        (bits as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn standard_normal(&mut self) -> f64 {
        standard_normal_quantile(self.uniform())
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// Chi-squared with two degrees of freedom (exponential with mean 2).
    pub fn chi_squared_2(&mut self) -> f64 {
        -2.0 * (1.0 - self.uniform()).ln()
    }

    pub fn bernoulli(&mut self, prob: f64) -> bool {
        self.uniform() < prob
    }
}

pub(crate) fn standard_normal_quantile(u: f64) -> f64 {
    Normal::standard().inverse_cdf(u)
}

pub(crate) fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..50 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn child_independent_of_parent_position() {
        let mut parent = RngStream::new(11);
        let c0 = parent.child(3);
        parent.uniform();
        let c1 = parent.child(3);
        assert_eq!(c0.key(), c1.key());
        assert_ne!(parent.child(3).key(), parent.child(4).key());
    }

    #[test]
    fn uniform_stays_open() {
        let mut s = RngStream::new(0);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn chi_squared_mean() {
        let mut s = RngStream::new(9);
        let n = 100_000;
        let mean = (0..n).map(|_| s.chi_squared_2()).sum::<f64>() / n as f64;
        // sd of chi2(2) is 2
        assert!((mean - 2.0).abs() < 4.0 * 2.0 / (n as f64).sqrt());
    }
}
