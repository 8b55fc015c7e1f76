//! Dense vector arithmetic, L2 clipping and replayable Gaussian sampling.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param, Result};

/// Flat dense vector of model parameters or model updates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.0 {
            *a *= factor;
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &[f64]) -> ParamVector {
        debug_assert_eq!(self.0.len(), other.len());
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl From<&[f64]> for ParamVector {
    fn from(values: &[f64]) -> Self {
        Self(values.to_vec())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

/// Factor `min(1, c / ‖v‖)` applied by [`clip_l2`]; 1 for the zero vector.
pub fn clip_factor(norm: f64, c: f64) -> f64 {
    if norm > c {
        c / norm
    } else {
        1.0
    }
}

/// Scales `v` by `min(1, c / ‖v‖₂)`.
///
/// The zero vector is returned unchanged. When the factor is 1 the input is
/// returned bit for bit.
pub fn clip_l2(v: &[f64], c: f64) -> Result<ParamVector> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(param("clipping threshold must be a positive finite number"));
    }
    let factor = clip_factor(l2_norm(v), c);
    if factor == 1.0 {
        return Ok(ParamVector::from(v));
    }
    let mut out: Vec<f64> = v.iter().map(|x| x * factor).collect();
    // Rounding in the product can leave the norm a few ulps above c.
    let mut norm = l2_norm(&out);
    while norm > c {
        let shrink = c / norm * (1.0 - f64::EPSILON);
        for x in &mut out {
            *x *= shrink;
        }
        norm = l2_norm(&out);
    }
    Ok(ParamVector(out))
}

/// What a random stream is used for. Streams with different purposes never
/// share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u64)]
pub enum Purpose {
    Synthesis = 1,
    Partition = 2,
    ModelInit = 3,
    ClientSampling = 4,
    MaskSelection = 5,
    ProxyTraining = 6,
    LocalTraining = 7,
    Noise = 8,
    PairwiseMask = 9,
    Test = 10,
}

/// Identifies one independent stream under a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub round: u64,
    pub client: u64,
    pub purpose: Purpose,
}

/// Counter-based random stream keyed by `(seed, round, client, purpose)`.
///
/// The full tuple is the ChaCha20 key, so two streams agree only if every
/// component agrees, and replaying a stream never depends on what was drawn
/// from any other stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub id: StreamId,
}

impl RngStream {
    pub fn new(seed: u64, round: u64, client: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            id: StreamId {
                round,
                client,
                purpose,
            },
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.id.round.to_le_bytes());
        key[16..24].copy_from_slice(&self.id.client.to_le_bytes());
        key[24..32].copy_from_slice(&(self.id.purpose as u64).to_le_bytes());
        ChaCha20Rng::from_seed(key)
    }
}

/// `count` independent draws from `N(0, std²)`.
pub fn gaussian_sample(stream: &RngStream, std: f64, count: usize) -> Result<Vec<f64>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(param("standard deviation must be finite and non-negative"));
    }
    if std == 0.0 {
        return Ok(vec![0.0; count]);
    }
    let mut rng = stream.rng();
    Ok((0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(l2_norm(&[1.0, 1.0, 1.0, 1.0]), 2.0);
    }

    #[test]
    fn clip_examples() {
        let v = clip_l2(&[3.0, 4.0], 1.0).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(&*clip_l2(&[0.3, 0.4], 1.0).unwrap(), &[0.3, 0.4]);
        assert_eq!(&*clip_l2(&[0.0, 0.0], 0.5).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn clip_rejects_bad_threshold() {
        assert!(clip_l2(&[1.0], 0.0).is_err());
        assert!(clip_l2(&[1.0], -1.0).is_err());
        assert!(clip_l2(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn gaussian_zero_std_and_errors() {
        let s = RngStream::new(1, 0, 0, Purpose::Test);
        assert_eq!(gaussian_sample(&s, 0.0, 3).unwrap(), vec![0.0; 3]);
        assert!(gaussian_sample(&s, -1.0, 3).is_err());
    }

    #[test]
    fn gaussian_variance() {
        let s = RngStream::new(7, 3, 2, Purpose::Noise);
        let xs = gaussian_sample(&s, 2.0, 100_000).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((3.9..=4.1).contains(&var), "variance {var}");
    }

    #[test]
    fn gaussian_replay_and_independence() {
        let s = RngStream::new(42, 1, 2, Purpose::Noise);
        let a = gaussian_sample(&s, 1.0, 4).unwrap();
        let b = gaussian_sample(&s, 1.0, 4).unwrap();
        assert_eq!(a, b);
        for other in [
            RngStream::new(43, 1, 2, Purpose::Noise),
            RngStream::new(42, 2, 2, Purpose::Noise),
            RngStream::new(42, 1, 3, Purpose::Noise),
            RngStream::new(42, 1, 2, Purpose::LocalTraining),
        ] {
            assert_ne!(a, gaussian_sample(&other, 1.0, 4).unwrap());
        }
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        let a = gaussian_sample(&RngStream::new(5, 0, 0, Purpose::Noise), 1.0, 50_000).unwrap();
        let b = gaussian_sample(&RngStream::new(5, 0, 1, Purpose::Noise), 1.0, 50_000).unwrap();
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
        // 5 standard errors for n = 50_000.
        assert!(corr.abs() < 5.0 / (a.len() as f64).sqrt(), "corr {corr}");
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..32)
    }

    proptest! {
        #[test]
        fn clip_bounded_and_idempotent(v in vec_strategy(), c in 1e-3f64..1e2) {
            let once = clip_l2(&v, c).unwrap();
            prop_assert!(once.l2_norm() <= c + 1e-12);
            let twice = clip_l2(&once, c).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn clip_preserves_direction(v in vec_strategy(), c in 1e-3f64..1e2, lambda in 1e-3f64..1e3) {
            let scaled: Vec<f64> = v.iter().map(|x| x * lambda).collect();
            let out = clip_l2(&scaled, c).unwrap();
            let (nv, no) = (l2_norm(&v), out.l2_norm());
            prop_assume!(nv > 1e-9 && no > 1e-12);
            let cos = v.iter().zip(out.iter()).map(|(a, b)| a * b).sum::<f64>() / (nv * no);
            prop_assert!((cos - 1.0).abs() < 1e-9);
        }
    }
}
