use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::field::Modulus;
use crate::linalg::ZqMatrix;

/// Seeded, reproducible randomness. Identical seeds give identical draws.
///
/// A stream is single-owner; parallel work derives independent streams with
/// [`RngStream::derive`] instead of sharing one.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `index` under the same seed.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(index.wrapping_add(1));
        RngStream { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform element of `[0, q)`; `random_range` rejects out-of-zone
    /// draws so the result is unbiased.
    pub fn uniform_zq(&mut self, q: Modulus) -> u64 {
        self.rng.random_range(0..q.value())
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize, q: Modulus) -> ZqMatrix {
        let data = (0..rows * cols).map(|_| self.uniform_zq(q)).collect();
        ZqMatrix::new(rows, cols, data, q)
    }

    /// Uniform `f64` in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.random_range(0..n)
    }
}

/// Zero-mean discrete Gaussian on the integers, sampled by inverse CDF over
/// the support `[-ceil(10 sigma), ceil(10 sigma)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGaussian {
    sigma: f64,
    bound: i64,
    cdf: Vec<f64>,
}

impl DiscreteGaussian {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma.is_finite() && sigma >= 0.0, "sigma must be finite and >= 0");
        if sigma == 0.0 {
            return DiscreteGaussian {
                sigma,
                bound: 0,
                cdf: vec![1.0],
            };
        }
        let bound = (10.0 * sigma).ceil() as i64;
        let weights: Vec<f64> = (-bound..=bound)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        DiscreteGaussian { sigma, bound, cdf }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Tail cut: every sample lies in `[-bound, bound]`.
    pub fn bound(&self) -> i64 {
        self.bound
    }

    pub fn sample(&self, rng: &mut RngStream) -> i64 {
        if self.bound == 0 {
            return 0;
        }
        let u = rng.unit();
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        idx as i64 - self.bound
    }
}

pub fn sample_gaussian(sigma: f64, rng: &mut RngStream) -> i64 {
    DiscreteGaussian::new(sigma).sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_zero() {
        let mut rng = RngStream::new(9);
        let g = DiscreteGaussian::new(0.0);
        assert!((0..1000).all(|_| g.sample(&mut rng) == 0));
    }

    #[test]
    fn moments_and_tail_cut() {
        let mut rng = RngStream::new(10);
        let g = DiscreteGaussian::new(3.2);
        assert_eq!(g.bound(), 32);
        let n = 100_000;
        let xs: Vec<i64> = (0..n).map(|_| g.sample(&mut rng)).collect();
        assert!(xs.iter().all(|x| x.abs() <= 32));
        let mean = xs.iter().sum::<i64>() as f64 / n as f64;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 3.2).abs() < 0.05 * 3.2, "std {}", var.sqrt());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let q = Modulus::new(97).unwrap();
        let a: Vec<u64> = {
            let mut r = RngStream::new(5);
            (0..20).map(|_| r.uniform_zq(q)).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(5);
            (0..20).map(|_| r.uniform_zq(q)).collect()
        };
        let c: Vec<u64> = {
            let mut r = RngStream::derive(5, 1);
            (0..20).map(|_| r.uniform_zq(q)).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
