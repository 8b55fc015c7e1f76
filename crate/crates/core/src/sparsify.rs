//! Shared coordinate masks for rand-k and top-k sparsification.

use alloc::vec::Vec;

use rand::seq::index;

use crate::data::Subset;
use crate::error::{param, Result};
use crate::model::{local_update, LocalOptState, ModelSpec};
use crate::numeric::{ParamVector, RngStream};

/// Sorted, duplicate-free coordinate indices selected out of `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVector {
    indices: Vec<usize>,
    dim: usize,
}

impl MaskVector {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() || indices.len() > dim {
            return Err(param("mask must select between 1 and d coordinates"));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) || indices[indices.len() - 1] >= dim {
            return Err(param("mask indices must be distinct and below d"));
        }
        Ok(Self { indices, dim })
    }

    pub fn full(dim: usize) -> Self {
        Self {
            indices: (0..dim).collect(),
            dim,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.dim
    }

    /// Values of `v` on the mask, in mask order.
    pub fn gather(&self, v: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| v[i]).collect()
    }

    /// Dense vector with `values` placed on the mask and zeros elsewhere.
    pub fn scatter(&self, values: &[f64]) -> ParamVector {
        let mut out = ParamVector::zeros(self.dim);
        for (&i, &x) in self.indices.iter().zip(values) {
            out[i] = x;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparsifierKind {
    RandK,
    TopK,
}

/// `k = max(1, round(p·d))`, capped at `d`.
pub fn k_from_ratio(p: f64, d: usize) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(param("compression ratio must lie in (0, 1]"));
    }
    Ok((libm::round(p * d as f64) as usize).clamp(1, d))
}

/// Uniform size-`k` subset of `0..d`.
pub fn select_randk(d: usize, k: usize, stream: &RngStream) -> Result<MaskVector> {
    if k == 0 || k > d {
        return Err(param("rand-k needs 1 <= k <= d"));
    }
    if k == d {
        return Ok(MaskVector::full(d));
    }
    let mut rng = stream.rng();
    MaskVector::new(index::sample(&mut rng, d, k).into_vec(), d)
}

/// Indices of the `k` largest `|v_i|`; ties go to the lower index.
pub fn top_k_indices(v: &[f64], k: usize) -> Result<MaskVector> {
    let d = v.len();
    if k == 0 || k > d {
        return Err(param("top-k needs 1 <= k <= d"));
    }
    if k == d {
        return Ok(MaskVector::full(d));
    }
    let mut order: Vec<usize> = (0..d).collect();
    let key = |&a: &usize, &b: &usize| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b));
    order.select_nth_unstable_by(k - 1, key);
    order.truncate(k);
    MaskVector::new(order, d)
}

/// Server-side top-k selection: trains on the public data from the global
/// model with the client optimizer and masks the largest entries of the
/// resulting update.
pub fn select_topk_proxy(
    model: &ModelSpec,
    global_params: &[f64],
    public_data: &Subset<'_>,
    opt: &LocalOptState,
    k: usize,
    stream: &RngStream,
) -> Result<MaskVector> {
    let d = global_params.len();
    if k == 0 || k > d {
        return Err(param("top-k needs 1 <= k <= d"));
    }
    if public_data.is_empty() {
        return Err(crate::error::data("top-k selection needs a nonempty public dataset"));
    }
    if k == d {
        return Ok(MaskVector::full(d));
    }
    let delta = local_update(model, global_params, public_data, opt, stream)?;
    top_k_indices(&delta, k)
}

/// Zeroes coordinates off the mask. Rand-k additionally multiplies the kept
/// coordinates by `d/k`.
pub fn apply_mask(update: &[f64], mask: &MaskVector, kind: SparsifierKind) -> Result<ParamVector> {
    if update.len() != mask.dim {
        return Err(param("update length does not match mask dimension"));
    }
    let scale = match kind {
        SparsifierKind::RandK => mask.dim as f64 / mask.k() as f64,
        SparsifierKind::TopK => 1.0,
    };
    let mut out = ParamVector::zeros(mask.dim);
    for &i in &mask.indices {
        out[i] = scale * update[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Purpose;

    #[test]
    fn apply_mask_examples() {
        let mask = MaskVector::new(alloc::vec![0, 2], 4).unwrap();
        let u = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(&*apply_mask(&u, &mask, SparsifierKind::RandK).unwrap(), &[2.0, 0.0, 6.0, 0.0]);
        assert_eq!(&*apply_mask(&u, &mask, SparsifierKind::TopK).unwrap(), &[1.0, 0.0, 3.0, 0.0]);
        assert!(apply_mask(&u[..3], &mask, SparsifierKind::TopK).is_err());
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_indices(&[3.0, -5.0, 1.0, 0.0], 2).unwrap().indices(), &[0, 1]);
        assert_eq!(top_k_indices(&[2.0, -2.0, 2.0, -2.0], 2).unwrap().indices(), &[0, 1]);
        assert_eq!(top_k_indices(&[0.0, 9.0, 1.0], 3).unwrap().indices(), &[0, 1, 2]);
        assert!(top_k_indices(&[1.0], 0).is_err());
    }

    #[test]
    fn randk_bounds_and_full() {
        let s = RngStream::new(1, 0, 0, Purpose::MaskSelection);
        assert_eq!(select_randk(5, 5, &s).unwrap(), MaskVector::full(5));
        assert!(select_randk(5, 6, &s).is_err());
        assert!(select_randk(5, 0, &s).is_err());
        assert_eq!(select_randk(100, 7, &s).unwrap(), select_randk(100, 7, &s).unwrap());
        assert_eq!(select_randk(100, 7, &s).unwrap().k(), 7);
    }

    #[test]
    fn randk_uniform_over_pairs() {
        let mut counts = [0usize; 6];
        let pairs = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
        let n = 60_000;
        for t in 0..n {
            let m = select_randk(4, 2, &RngStream::new(3, t, 0, Purpose::MaskSelection)).unwrap();
            let pos = pairs.iter().position(|p| p == m.indices()).unwrap();
            counts[pos] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn k_rounding() {
        assert_eq!(k_from_ratio(0.001, 100).unwrap(), 1);
        assert_eq!(k_from_ratio(0.1, 800).unwrap(), 80);
        assert_eq!(k_from_ratio(1.0, 800).unwrap(), 800);
        assert!(k_from_ratio(0.0, 10).is_err());
        assert!(k_from_ratio(1.5, 10).is_err());
    }

    #[test]
    fn mask_validation() {
        assert!(MaskVector::new(alloc::vec![], 3).is_err());
        assert!(MaskVector::new(alloc::vec![1, 1], 3).is_err());
        assert!(MaskVector::new(alloc::vec![3], 3).is_err());
        assert_eq!(MaskVector::new(alloc::vec![2, 0], 3).unwrap().indices(), &[0, 2]);
    }
}
