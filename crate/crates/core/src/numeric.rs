//! Dense vector arithmetic and addressable deterministic randomness.
//!
//! Every random draw in the simulator comes from an [`RngStream`] addressed
//! by `(seed, stream id)`. Stream ids are derived from a purpose tag plus the
//! worker and iteration the draw belongs to, so the value of any draw does
//! not depend on the order in which the event loop visits workers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Flat real-valued parameter (or gradient) vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn filled(n: usize, value: f64) -> Self {
        ParamVector(vec![value; n])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// `self += a * x`
    pub fn add_scaled(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_dim(x)?;
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.0 {
            *v *= a;
        }
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(-1.0, other, self)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// FNV-1a over the IEEE-754 bit patterns. Used to audit which parameter
    /// vector a gradient was evaluated at.
    pub fn checksum(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET ^ (self.0.len() as u64);
        for v in &self.0 {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(PRIME);
            }
        }
        h
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `a * x + y`, elementwise.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    x.check_dim(y)?;
    Ok(ParamVector(
        x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect(),
    ))
}

/// Elementwise product.
pub fn hadamard(x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    x.check_dim(y)?;
    Ok(ParamVector(
        x.0.iter().zip(&y.0).map(|(a, b)| a * b).collect(),
    ))
}

pub fn l2_norm_sq(x: &ParamVector) -> f64 {
    x.0.iter().map(|v| v * v).sum()
}

/// Purpose tags keep the substreams used for different kinds of draws apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Data = 1,
    Init = 2,
    Sampling = 3,
    Timing = 4,
    Estimation = 5,
    Probe = 6,
}

/// A deterministic random stream addressed by `(seed, stream id)`.
///
/// Backed by ChaCha8, whose 64-bit stream parameter gives independent,
/// platform-stable substreams for the same seed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    /// Substream for a `(tag, worker, index)` address.
    pub fn derive(seed: u64, tag: StreamTag, worker: u64, index: u64) -> Self {
        let mut h = splitmix64(tag as u64);
        h = splitmix64(h ^ worker);
        h = splitmix64(h ^ index);
        RngStream::new(seed, h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn draw_uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(Error::contract(format!(
                "draw_uniform requires lo <= hi (lo={lo}, hi={hi})"
            )));
        }
        if lo == hi {
            return Ok(lo);
        }
        let v = lo + (hi - lo) * self.next_unit();
        // rounding can land exactly on hi for tiny intervals
        Ok(if v < hi { v } else { lo })
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn draw_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "draw_index on an empty range");
        self.rng.random_range(0..n)
    }

    pub fn draw_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn draw_bernoulli(&mut self, p: f64) -> bool {
        self.next_unit() < p
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn axpy_examples() {
        assert_eq!(axpy(0.0, &pv(&[1.0, 2.0]), &pv(&[3.0, 4.0])).unwrap(), pv(&[3.0, 4.0]));
        assert_eq!(axpy(1.0, &pv(&[1.0, 1.0]), &pv(&[0.0, 0.0])).unwrap(), pv(&[1.0, 1.0]));
        assert_eq!(axpy(-0.5, &pv(&[2.0, 4.0]), &pv(&[1.0, 1.0])).unwrap(), pv(&[0.0, -1.0]));
    }

    #[test]
    fn axpy_dimension_mismatch() {
        let err = axpy(1.0, &pv(&[1.0]), &pv(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, found: 2 }));
    }

    #[test]
    fn hadamard_examples() {
        assert_eq!(hadamard(&pv(&[1.0, 2.0]), &pv(&[3.0, 4.0])).unwrap(), pv(&[3.0, 8.0]));
        assert_eq!(hadamard(&pv(&[0.0, 5.0]), &pv(&[7.0, 0.0])).unwrap(), pv(&[0.0, 0.0]));
        assert!(hadamard(&pv(&[1.0]), &pv(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm_sq(&pv(&[0.0, 0.0, 0.0])), 0.0);
        assert_eq!(l2_norm_sq(&pv(&[3.0, 4.0])), 25.0);
        assert_eq!(l2_norm_sq(&pv(&[1.0, 1.0, 1.0, 1.0])), 4.0);
    }

    #[test]
    fn degenerate_uniform() {
        let mut rng = RngStream::new(7, 0);
        assert_eq!(rng.draw_uniform(0.0, 0.0).unwrap(), 0.0);
        assert!(rng.draw_uniform(1.0, 0.0).is_err());
    }

    #[test]
    fn uniform_is_deterministic() {
        let a = RngStream::new(42, 3).draw_uniform(0.0, 1.0).unwrap();
        let b = RngStream::new(42, 3).draw_uniform(0.0, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn uniform_mean_converges() {
        let mut rng = RngStream::new(2024, 11);
        let n = 100_000;
        let mean = (0..n).map(|_| rng.draw_uniform(0.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn distinct_streams_differ() {
        let a = RngStream::new(9, 0).next_unit();
        let b = RngStream::new(9, 1).next_unit();
        assert_ne!(a, b);
        let c = RngStream::derive(9, StreamTag::Timing, 0, 0).next_unit();
        let d = RngStream::derive(9, StreamTag::Timing, 1, 0).next_unit();
        let e = RngStream::derive(9, StreamTag::Sampling, 0, 0).next_unit();
        assert_ne!(c, d);
        assert_ne!(c, e);
    }

    #[test]
    fn checksum_tracks_bits() {
        let a = pv(&[1.0, 2.0]);
        assert_eq!(a.checksum(), pv(&[1.0, 2.0]).checksum());
        assert_ne!(a.checksum(), pv(&[2.0, 1.0]).checksum());
        assert_ne!(pv(&[0.0]).checksum(), pv(&[-0.0]).checksum());
    }

    proptest! {
        #[test]
        fn hadamard_with_ones_is_identity(v in prop::collection::vec(-1e6f64..1e6, 0..32)) {
            let x = ParamVector::from_vec(v);
            let ones = ParamVector::filled(x.len(), 1.0);
            prop_assert_eq!(hadamard(&x, &ones).unwrap(), x);
        }

        #[test]
        fn uniform_stays_in_range(seed in any::<u64>(), lo in -1e3f64..1e3, width in 0.0f64..1e3) {
            let mut rng = RngStream::new(seed, 0);
            let hi = lo + width;
            for _ in 0..16 {
                let v = rng.draw_uniform(lo, hi).unwrap();
                prop_assert!(v >= lo && (v < hi || lo == hi));
            }
        }
    }
}
