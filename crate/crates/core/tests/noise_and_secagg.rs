//! Statistical checks of the Gaussian mechanism and exactness/uniformity of
//! simulated secure aggregation.

use fedsmp_core::numeric::clip_l2;
use fedsmp_core::privacy::perturb_masked;
use fedsmp_core::secagg::{aggregate, make_pairwise_masks, mask_update, secure_sum, FixedPointCodec, MaskedUpdate};
use fedsmp_core::sparsify::MaskVector;
use fedsmp_core::{Purpose, RngStream};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

#[test]
fn per_client_and_aggregated_noise_variance() {
    let (clip, sigma, r) = (2.0, 1.5, 10usize);
    let d = 8;
    let mask = MaskVector::new(vec![1, 4, 6], d).unwrap();
    let codec = FixedPointCodec::default();
    let zero = vec![0.0; d];
    let reps = 100_000 / mask.k() + 1;
    let mut per_client = Vec::new();
    let mut aggregated = Vec::new();
    for rep in 0..reps as u64 {
        let ids: Vec<usize> = (0..r).collect();
        let noisy: Vec<Vec<f64>> = ids
            .iter()
            .map(|&c| {
                let out = perturb_masked(&zero, &mask, clip, sigma, r, &RngStream::new(9, rep, c as u64, Purpose::Noise)).unwrap();
                for i in (0..d).filter(|i| !mask.indices().contains(i)) {
                    assert_eq!(out[i].to_bits(), 0f64.to_bits());
                }
                mask.gather(&out)
            })
            .collect();
        per_client.extend(noisy[0].iter().copied());
        let (sum, _) = secure_sum(&ids, &noisy, rep, 9, &codec).unwrap();
        aggregated.extend(sum.iter().copied());
    }
    assert!(aggregated.len() >= 100_000);
    let target = clip * clip * sigma * sigma;
    let v_agg = sample_variance(&aggregated);
    let v_client = sample_variance(&per_client[..per_client.len().min(100_000)]);
    assert!((v_agg / target - 1.0).abs() < 0.05, "aggregated variance {v_agg} vs {target}");
    assert!((v_client / (target / r as f64) - 1.0).abs() < 0.05, "per-client variance {v_client}");
}

#[test]
fn neighbouring_client_sets_differ_by_at_most_clip() {
    let mut rng = RngStream::new(1, 0, 0, Purpose::Test).rng();
    let clip = 0.7;
    for _ in 0..200 {
        let d = rng.random_range(1..20);
        let n = rng.random_range(1..8);
        let updates: Vec<Vec<f64>> = (0..=n)
            .map(|_| {
                let scale = rng.random_range(0.01..10.0);
                let v: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
                clip_l2(&v, clip).unwrap().into_inner()
            })
            .collect();
        let sum = |set: &[Vec<f64>]| -> Vec<f64> {
            (0..d).map(|j| set.iter().map(|u| u[j]).sum()).collect()
        };
        let with = sum(&updates);
        let without = sum(&updates[..n]);
        let diff: f64 = with.iter().zip(&without).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(diff <= clip * (1.0 + 1e-12));
    }
}

#[test]
fn secure_sum_is_exact_up_to_quantization() {
    let codec = FixedPointCodec::default();
    let mut rng = RngStream::new(2, 0, 0, Purpose::Test).rng();
    let tol_unit = 2f64.powi(-(codec.scale_bits as i32) - 1);
    for inst in 0..1000u64 {
        let r = rng.random_range(2..16);
        let len = rng.random_range(1..40);
        let bound = codec.clamp_range / r as f64;
        let mut ids: Vec<usize> = rand::seq::index::sample(&mut rng, 1000, r).into_vec();
        ids.sort_unstable();
        let updates: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..len).map(|_| rng.random_range(-bound..bound) * rng.random_range(0.0..1.0f64).powi(8)).collect())
            .collect();
        let (sum, stats) = secure_sum(&ids, &updates, inst, 77, &codec).unwrap();
        assert_eq!(stats.saturated, 0);
        assert_eq!(stats.coordinates_sent, r * len);
        for j in 0..len {
            let truth: f64 = updates.iter().map(|u| u[j]).sum();
            assert!((sum[j] - truth).abs() <= r as f64 * tol_unit, "instance {inst}");
        }
        let masks = make_pairwise_masks(&ids, len, inst, 77, &codec).unwrap();
        for j in 0..len {
            assert_eq!(masks.iter().fold(0u64, |a, m| a.wrapping_add(m[j])), 0);
        }
        let plain: Vec<MaskedUpdate> = updates.iter().map(|u| MaskedUpdate { residues: codec.encode(u).0 }).collect();
        assert_eq!(aggregate(&plain, &codec).unwrap(), sum);
    }
}

#[test]
fn encode_decode_encode_is_fixed_point() {
    let codec = FixedPointCodec::default();
    let mut rng = RngStream::new(3, 0, 0, Purpose::Test).rng();
    let v: Vec<f64> = (0..1000).map(|_| rng.random_range(-50.0..50.0)).collect();
    let (once, _) = codec.encode(&v);
    let (twice, _) = codec.encode(&codec.decode(&once));
    assert_eq!(once, twice);
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

/// A client always submitting the same update: its masked residue, viewed by
/// the server across 10^4 rounds, is uniform in both low and high bits.
#[test]
fn masked_submission_looks_uniform() {
    let codec = FixedPointCodec::default();
    let ids = [3usize, 8, 21];
    let update = codec.encode(&[0.25]).0;
    let mut low = vec![0u64; 256];
    let mut high = vec![0u64; 256];
    for round in 0..10_000u64 {
        let masks = make_pairwise_masks(&ids, 1, round, 5, &codec).unwrap();
        let seen = mask_update(&update, &masks[0], &codec).unwrap().residues[0];
        low[(seen & 0xFF) as usize] += 1;
        high[(seen >> 56) as usize] += 1;
    }
    assert!(chi_square_p(&low) > 0.001);
    assert!(chi_square_p(&high) > 0.001);
}
