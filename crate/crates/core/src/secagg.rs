//! Simulated secure aggregation over `Z_{2^b}`: fixed-point encoding,
//! pairwise zero-sum masks and recovery of the exact sum.
//!
//! Honest-but-curious setting without dropouts. Masks come from a shared
//! stream per client pair, standing in for key agreement.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{param, Error, Result};
use crate::numeric::{ParamVector, Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCodec {
    pub scale_bits: u32,
    pub modulus_bits: u32,
    pub clamp_range: f64,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self {
            scale_bits: 20,
            modulus_bits: 64,
            clamp_range: (1u64 << 20) as f64,
        }
    }
}

impl FixedPointCodec {
    /// Requires `clamp_range · 2^s < 2^(b−1) / r_max` so that sums of up to
    /// `r_max` clamped values never wrap.
    pub fn validate(&self, r_max: usize) -> Result<()> {
        if !(2..=64).contains(&self.modulus_bits) || self.scale_bits >= self.modulus_bits - 1 {
            return Err(param("need 2 <= modulus_bits <= 64 and scale_bits < modulus_bits - 1"));
        }
        if !(self.clamp_range > 0.0) || !self.clamp_range.is_finite() {
            return Err(param("clamp_range must be positive and finite"));
        }
        let max_code = self.clamp_range * libm::exp2(f64::from(self.scale_bits));
        let limit = libm::exp2(f64::from(self.modulus_bits - 1)) / r_max.max(1) as f64;
        if max_code >= limit {
            return Err(param(format!(
                "codec can wrap: clamp_range * 2^{} = {max_code:e} must be below 2^{} / {r_max}",
                self.scale_bits,
                self.modulus_bits - 1
            )));
        }
        Ok(())
    }

    fn modulus_mask(&self) -> u64 {
        if self.modulus_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.modulus_bits) - 1
        }
    }

    fn scale(&self) -> f64 {
        libm::exp2(f64::from(self.scale_bits))
    }

    /// `round(clamp(v, ±clamp_range) · 2^s) mod 2^b`, plus the number of
    /// clamped entries.
    pub fn encode(&self, v: &[f64]) -> (Vec<u64>, usize) {
        let scale = self.scale();
        let mask = self.modulus_mask();
        let mut saturated = 0;
        let residues = v
            .iter()
            .map(|&x| {
                let clamped = x.clamp(-self.clamp_range, self.clamp_range);
                if clamped != x {
                    saturated += 1;
                }
                (libm::round(clamped * scale) as i64 as u64) & mask
            })
            .collect();
        (residues, saturated)
    }

    /// Maps a residue to the signed range `[−2^(b−1), 2^(b−1))` and divides
    /// by `2^s`.
    pub fn decode_one(&self, residue: u64) -> f64 {
        let b = self.modulus_bits;
        let signed = if residue >= 1u64 << (b - 1) {
            i128::from(residue) - (1i128 << b)
        } else {
            i128::from(residue)
        };
        signed as f64 / self.scale()
    }

    pub fn decode(&self, residues: &[u64]) -> Vec<f64> {
        residues.iter().map(|&r| self.decode_one(r)).collect()
    }

    fn add(&self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.modulus_mask()
    }

    fn sub(&self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.modulus_mask()
    }
}

/// One client's submission as seen by the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub residues: Vec<u64>,
}

fn pair_stream(master_seed: u64, round: u64, a: usize, b: usize) -> RngStream {
    RngStream::new(master_seed, round, ((a as u64) << 32) | b as u64, Purpose::PairwiseMask)
}

/// Zero-sum masks for `client_ids`, returned in the same order. For every
/// pair `i < j` a shared stream yields `u_ij`; client `i` adds it and client
/// `j` subtracts it, so the modular sum of all masks is zero.
pub fn make_pairwise_masks(
    client_ids: &[usize],
    len: usize,
    round: u64,
    master_seed: u64,
    codec: &FixedPointCodec,
) -> Result<Vec<Vec<u64>>> {
    if client_ids.len() < 2 {
        return Err(param("pairwise masking needs at least two clients"));
    }
    let mut sorted = client_ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(param("client ids must be distinct"));
    }
    let mut masks = vec![vec![0u64; len]; client_ids.len()];
    let modmask = codec.modulus_mask();
    for a in 0..client_ids.len() {
        for b in 0..client_ids.len() {
            let (lo, hi) = (client_ids[a], client_ids[b]);
            if lo >= hi {
                continue;
            }
            let mut rng = pair_stream(master_seed, round, lo, hi).rng();
            for c in 0..len {
                let u = rng.next_u64() & modmask;
                masks[a][c] = codec.add(masks[a][c], u);
                masks[b][c] = codec.sub(masks[b][c], u);
            }
        }
    }
    Ok(masks)
}

/// Adds a pairwise mask to an encoded update.
pub fn mask_update(encoded: &[u64], mask: &[u64], codec: &FixedPointCodec) -> Result<MaskedUpdate> {
    if encoded.len() != mask.len() {
        return Err(Error::Protocol("mask length does not match the encoded update".into()));
    }
    Ok(MaskedUpdate {
        residues: encoded.iter().zip(mask).map(|(&e, &m)| codec.add(e, m)).collect(),
    })
}

/// Coordinatewise modular sum of all submissions, decoded to reals.
pub fn aggregate(masked: &[MaskedUpdate], codec: &FixedPointCodec) -> Result<ParamVector> {
    let first = masked
        .first()
        .ok_or_else(|| Error::Protocol("no submissions to aggregate".into()))?;
    let len = first.residues.len();
    if masked.iter().any(|m| m.residues.len() != len) {
        return Err(Error::Protocol("submissions have inconsistent lengths".into()));
    }
    let mut sum = vec![0u64; len];
    for m in masked {
        for (s, &r) in sum.iter_mut().zip(&m.residues) {
            *s = codec.add(*s, r);
        }
    }
    Ok(ParamVector::new(codec.decode(&sum)))
}

/// Statistics from one secure-aggregation round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AggregationStats {
    /// Entries clamped by the encoder across all clients.
    pub saturated: usize,
    /// Residues transmitted across all clients.
    pub coordinates_sent: usize,
}

/// Runs the whole protocol for one round: encode, mask, submit, aggregate.
/// `client_ids[i]` owns `updates[i]`.
pub fn secure_sum(
    client_ids: &[usize],
    updates: &[Vec<f64>],
    round: u64,
    master_seed: u64,
    codec: &FixedPointCodec,
) -> Result<(ParamVector, AggregationStats)> {
    if client_ids.len() != updates.len() || updates.is_empty() {
        return Err(Error::Protocol("need one update per participating client".into()));
    }
    let len = updates[0].len();
    if updates.iter().any(|u| u.len() != len) {
        return Err(Error::Protocol("client updates have inconsistent lengths".into()));
    }
    let mut stats = AggregationStats::default();
    let encoded: Vec<Vec<u64>> = updates
        .iter()
        .map(|u| {
            let (e, sat) = codec.encode(u);
            stats.saturated += sat;
            stats.coordinates_sent += e.len();
            e
        })
        .collect();
    let submissions = if client_ids.len() == 1 {
        alloc::vec![MaskedUpdate { residues: encoded[0].clone() }]
    } else {
        let masks = make_pairwise_masks(client_ids, len, round, master_seed, codec)?;
        encoded
            .iter()
            .zip(&masks)
            .map(|(e, m)| mask_update(e, m, codec))
            .collect::<Result<Vec<_>>>()?
    };
    Ok((aggregate(&submissions, codec)?, stats))
}
