//! Exhaustive-enumeration checks of the sparsifier laws for small `d`.

use fedsmp_core::sparsify::{apply_mask, top_k_indices, MaskVector, SparsifierKind};
use fedsmp_core::{Purpose, RngStream};
use proptest::prelude::*;
use rand::Rng;

fn subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << d)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..d).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn random_vectors(d: usize, count: usize, tag: u64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(tag, d as u64, 0, Purpose::Test).rng();
    (0..count).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect()
}

#[test]
fn randk_average_of_all_masks_on_ones() {
    let v = [1.0; 4];
    let mut acc = [0.0; 4];
    let all = subsets(4, 2);
    assert_eq!(all.len(), 6);
    for s in &all {
        let out = apply_mask(&v, &MaskVector::new(s.clone(), 4).unwrap(), SparsifierKind::RandK).unwrap();
        for (a, o) in acc.iter_mut().zip(out.iter()) {
            *a += o / 6.0;
        }
    }
    for a in acc {
        assert!((a - 1.0).abs() < 1e-15);
    }
}

#[test]
fn randk_unbiased_and_variance_identity() {
    for d in 1..=8 {
        for k in 1..=d {
            let masks = subsets(d, k);
            let m = masks.len() as f64;
            for v in random_vectors(d, 10, k as u64) {
                let mut mean = vec![0.0; d];
                let mut var = 0.0;
                for s in &masks {
                    let out = apply_mask(&v, &MaskVector::new(s.clone(), d).unwrap(), SparsifierKind::RandK).unwrap();
                    for (a, o) in mean.iter_mut().zip(out.iter()) {
                        *a += o / m;
                    }
                    var += sq_dist(&out, &v) / m;
                }
                let norm_sq: f64 = v.iter().map(|x| x * x).sum();
                for (a, x) in mean.iter().zip(&v) {
                    assert!((a - x).abs() <= 1e-10, "d={d} k={k}");
                }
                let expected = (d as f64 / k as f64 - 1.0) * norm_sq;
                assert!((var - expected).abs() <= 1e-10 * expected.max(1.0), "d={d} k={k}: {var} vs {expected}");
            }
        }
    }
}

#[test]
fn topk_contracts_and_is_best_k_sparse_copy() {
    for d in 1..=8 {
        for k in 1..=d {
            let masks = subsets(d, k);
            for v in random_vectors(d, 10, 100 + k as u64) {
                let top = apply_mask(&v, &top_k_indices(&v, k).unwrap(), SparsifierKind::TopK).unwrap();
                let err = sq_dist(&top, &v);
                let norm_sq: f64 = v.iter().map(|x| x * x).sum();
                assert!(err <= (1.0 - k as f64 / d as f64) * norm_sq + 1e-12);
                let best = masks
                    .iter()
                    .map(|s| {
                        let copy = apply_mask(&v, &MaskVector::new(s.clone(), d).unwrap(), SparsifierKind::TopK).unwrap();
                        sq_dist(&copy, &v)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(err <= best + 1e-12, "d={d} k={k}");
            }
        }
    }
}

proptest! {
    #[test]
    fn exactly_d_minus_k_zeros(
        v in prop::collection::vec(prop_oneof![-5.0..-0.1f64, 0.1..5.0f64], 1..40),
        frac in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let d = v.len();
        let k = 1 + ((d - 1) as f64 * frac) as usize;
        let masks = [
            fedsmp_core::sparsify::select_randk(d, k, &RngStream::new(seed, 0, 0, Purpose::MaskSelection)).unwrap(),
            top_k_indices(&v, k).unwrap(),
        ];
        for mask in &masks {
            for kind in [SparsifierKind::RandK, SparsifierKind::TopK] {
                let out = apply_mask(&v, mask, kind).unwrap();
                prop_assert_eq!(out.iter().filter(|x| **x == 0.0).count(), d - k);
            }
        }
    }

    #[test]
    fn topk_keeps_largest_magnitudes(v in prop::collection::vec(-10.0..10.0f64, 1..30), frac in 0.0..1.0f64) {
        let d = v.len();
        let k = 1 + ((d - 1) as f64 * frac) as usize;
        let mask = top_k_indices(&v, k).unwrap();
        let kept_min = mask.indices().iter().map(|&i| v[i].abs()).fold(f64::INFINITY, f64::min);
        for i in (0..d).filter(|i| !mask.indices().contains(i)) {
            prop_assert!(v[i].abs() <= kept_min);
        }
    }
}
