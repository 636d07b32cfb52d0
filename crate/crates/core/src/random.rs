//! Deterministic, splittable randomness.
//!
//! Every stochastic routine in this crate draws from a [`RandomSource`]: a
//! ChaCha stream cipher keyed by a 64-bit seed, with the cipher's stream
//! number used as a branch identifier. Branching derives a child stream from
//! `(parent stream, index)`, so parallel replicates can each be handed their
//! own source up front and produce the same draws no matter how work is
//! scheduled. Distinct branch indices yield distinct cipher streams, which
//! never overlap.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::point::AtomTag;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Finalizer from the splitmix64 generator; a bijection on u64 used to mix
/// a parent stream id with a branch index.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reproducible random stream with cheap, non-overlapping branching and a
/// counter for minting fresh atom tags.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    tags_issued: u64,
}

impl RandomSource {
    /// Root source for a seed. Equal seeds give bit-identical draw sequences.
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomSource { seed, stream, rng, tags_issued: 0 }
    }

    /// Derive an independent child source. For a fixed parent, distinct
    /// indices map to distinct streams, so sibling branches never share
    /// random material.
    pub fn branch(&self, index: u64) -> RandomSource {
        let child = splitmix64(self.stream ^ GOLDEN.wrapping_mul(index.wrapping_add(1)));
        Self::with_stream(self.seed, child)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in [0, 1), with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() requires a nonempty range");
        (self.rng.next_u64() % n as u64) as usize
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        let dist = Normal::new(mean, sd)
            .map_err(|e| Error::Config(format!("normal({mean}, {sd}): {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    pub fn poisson(&mut self, rate: f64) -> Result<u64> {
        if rate == 0.0 {
            return Ok(0);
        }
        let dist = Poisson::new(rate)
            .map_err(|e| Error::Config(format!("poisson({rate}): {e}")))?;
        Ok(dist.sample(&mut self.rng) as u64)
    }

    /// Mint a tag for an atom freshly drawn from a diffuse base. Tags are
    /// unique within a source and, because sibling branches have distinct
    /// stream ids, unique across branches as well.
    pub fn fresh_tag(&mut self) -> AtomTag {
        self.tags_issued += 1;
        AtomTag { stream: self.stream, counter: self.tags_issued }
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_reproduce_bit_identical_draws() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = RandomSource::new(1);
        let mut b = RandomSource::new(2);
        let same = (0..16).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 16);
    }

    #[test]
    fn branches_are_reproducible_and_distinct() {
        let root = RandomSource::new(7);
        let mut c0 = root.branch(0);
        let mut c0_again = root.branch(0);
        let mut c1 = root.branch(1);
        let a: Vec<u64> = (0..32).map(|_| c0.next_u64()).collect();
        let b: Vec<u64> = (0..32).map(|_| c0_again.next_u64()).collect();
        let c: Vec<u64> = (0..32).map(|_| c1.next_u64()).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn branch_ids_unique_for_small_indices() {
        let root = RandomSource::new(9);
        let mut seen = std::collections::HashSet::new();
        for i in 0..10_000u64 {
            assert!(seen.insert(root.branch(i).stream()), "stream collision at {i}");
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = RandomSource::new(3);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn fresh_tags_are_unique_and_stream_scoped() {
        let root = RandomSource::new(5);
        let mut a = root.branch(0);
        let mut b = root.branch(1);
        let ta1 = a.fresh_tag();
        let ta2 = a.fresh_tag();
        let tb1 = b.fresh_tag();
        assert_ne!(ta1, ta2);
        assert_ne!(ta1, tb1);
        assert_eq!(ta1.stream, ta2.stream);
        assert_ne!(ta1.stream, tb1.stream);
    }

    #[test]
    fn poisson_zero_rate_is_zero() {
        let mut rng = RandomSource::new(11);
        assert_eq!(rng.poisson(0.0).unwrap(), 0);
    }
}
