//! Reproducible random streams.
//!
//! Every stream is a xoshiro256++ generator whose state is filled by SplitMix64
//! from a 64-bit seed (the reference seeding procedure of the xoshiro authors).
//! Uniform doubles use the top 53 bits of a draw: `(x >> 11) * 2^-53`, which lies
//! in `[0, 1)`. Standard normals use the basic Box-Muller transform on two
//! uniforms `u1, u2`:
//!
//! ```text
//! r = sqrt(-2 ln(1 - u1)),  z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)
//! ```
//!
//! `z0` is returned first and `z1` is cached for the next call. Child streams are
//! derived from `(seed, index)` by a SplitMix64 finaliser so Monte-Carlo replicas
//! can be generated in any order and still reproduce the same values.

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const ALGORITHM: &str = "xoshiro256++ (SplitMix64 seeding), Box-Muller normals";

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    draws: u64,
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            draws: 0,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of raw 64-bit draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Independent stream number `index` derived from this stream's seed.
    ///
    /// The child does not depend on how many values the parent already produced.
    pub fn child(&self, index: u64) -> Rng {
        let mixed = splitmix64(self.seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)));
        Rng::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * angle.sin());
        r * angle.cos()
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Uniform point on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.normal_vec(dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-300 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// Uniform point in the closed unit ball in `dim` dimensions.
    pub fn unit_ball(&mut self, dim: usize) -> Vec<f64> {
        let direction = self.unit_vector(dim);
        let radius = self.uniform().powf(1.0 / dim as f64);
        direction.into_iter().map(|x| x * radius).collect()
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            idx.swap(i, j);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(11);
        let mut b = Rng::new(11);
        for _ in 0..1000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(a.draws(), b.draws());
    }

    #[test]
    fn children_are_order_independent() {
        let root = Rng::new(5);
        let mut advanced = root.clone();
        advanced.normal_vec(17);
        assert_eq!(root.child(3).next_u64(), advanced.child(3).next_u64());
        assert_ne!(root.child(3).next_u64(), root.child(4).next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn standard_normal_moments_within_clt_bounds() {
        // mean ~ N(0, 1/N), sample variance ~ N(1, 2/N) for Gaussian draws
        let n = 1_000_000usize;
        let mut r = Rng::new(2024);
        let draws = r.normal_vec(n);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let mean_sigma = (1.0 / n as f64).sqrt();
        let var_sigma = (2.0 / n as f64).sqrt();
        assert!(mean.abs() < 5.0 * mean_sigma, "mean {mean}");
        assert!((var - 1.0).abs() < 5.0 * var_sigma, "var {var}");
    }

    #[test]
    fn unit_vector_has_unit_norm() {
        let mut r = Rng::new(9);
        for dim in 1..6 {
            let v = r.unit_vector(dim);
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = Rng::new(3);
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
