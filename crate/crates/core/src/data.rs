//! Datasets, client partitions and IDX decoding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{data, param, Error, Result};
use crate::numeric::{Purpose, RngStream};

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u32>, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(data("feature matrix does not match the number of labels"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(data(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Copies the selected rows into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    /// Per-class counts.
    pub fn histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in indices {
            h[self.labels[i] as usize] += 1;
        }
        h
    }
}

/// Borrowed view of some rows of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Subset<'a> {
    pub dataset: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> Subset<'a> {
    pub fn new(dataset: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { dataset, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Client shards plus the server-held public split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    pub public_indices: Vec<usize>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    /// Checks disjointness, nonempty shards and that indices are in range.
    pub fn validate(&self, n_examples: usize) -> Result<()> {
        let mut seen = vec![false; n_examples];
        for idx in self.shards.iter().flatten().chain(&self.public_indices) {
            if *idx >= n_examples || seen[*idx] {
                return Err(data("partition indices overlap or are out of range"));
            }
            seen[*idx] = true;
        }
        if self.shards.iter().any(|s| s.is_empty()) {
            return Err(data("partition has an empty shard"));
        }
        Ok(())
    }
}

/// Gaussian blobs: one mean per class drawn uniformly on the sphere of
/// radius `class_sep`, unit covariance. Labels cycle through the classes so
/// every prefix is as balanced as possible.
pub fn synth_classification(
    seed: u64,
    n_examples: usize,
    input_dim: usize,
    num_classes: usize,
    class_sep: f64,
) -> Result<Dataset> {
    if n_examples == 0 || input_dim == 0 || num_classes == 0 {
        return Err(param("synthetic dataset sizes must be at least 1"));
    }
    if !(class_sep >= 0.0) || !class_sep.is_finite() {
        return Err(param("class_sep must be finite and non-negative"));
    }
    let mut rng = RngStream::new(seed, 0, 0, Purpose::Synthesis).rng();
    let mut means = vec![0.0; num_classes * input_dim];
    for mean in means.chunks_mut(input_dim) {
        loop {
            for m in mean.iter_mut() {
                *m = StandardNormal.sample(&mut rng);
            }
            let norm = crate::numeric::l2_norm(mean);
            if norm > 1e-12 {
                mean.iter_mut().for_each(|m| *m *= class_sep / norm);
                break;
            }
        }
    }
    let mut features = Vec::with_capacity(n_examples * input_dim);
    let mut labels = Vec::with_capacity(n_examples);
    for i in 0..n_examples {
        let label = i % num_classes;
        let mean = &means[label * input_dim..(label + 1) * input_dim];
        for m in mean {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(m + z);
        }
        labels.push(label as u32);
    }
    Dataset::new(features, labels, input_dim, num_classes)
}

fn public_split(n: usize, public_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&public_fraction) {
        return Err(param("public_fraction must lie in [0, 1)"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(seed, 0, 0, Purpose::Partition).rng());
    let n_public = libm::round(public_fraction * n as f64) as usize;
    let rest = order.split_off(n_public);
    let mut public = order;
    public.sort_unstable();
    Ok((public, rest))
}

/// Public split drawn uniformly first; the shuffled remainder is dealt into
/// `n_clients` contiguous shards whose sizes differ by at most one.
pub fn partition_iid(dataset: &Dataset, n_clients: usize, public_fraction: f64, seed: u64) -> Result<Partition> {
    if n_clients == 0 {
        return Err(param("need at least one client"));
    }
    let (public_indices, rest) = public_split(dataset.len(), public_fraction, seed)?;
    if rest.len() < n_clients {
        return Err(data(format!(
            "{} non-public examples cannot fill {n_clients} nonempty shards",
            rest.len()
        )));
    }
    let base = rest.len() / n_clients;
    let extra = rest.len() % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let len = base + usize::from(c < extra);
        shards.push(rest[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition {
        shards,
        public_indices,
    })
}

/// Label-sorted sharding: the non-public examples are sorted by label, cut
/// into `n_clients · shards_per_client` near-equal contiguous pieces and the
/// pieces are dealt to clients at random.
pub fn partition_label_shards(
    dataset: &Dataset,
    n_clients: usize,
    shards_per_client: usize,
    public_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if n_clients == 0 || shards_per_client == 0 {
        return Err(param("need at least one client and one shard per client"));
    }
    let (public_indices, mut rest) = public_split(dataset.len(), public_fraction, seed)?;
    let n_pieces = n_clients * shards_per_client;
    if rest.len() < n_pieces {
        return Err(data(format!(
            "{} non-public examples cannot fill {n_pieces} shards",
            rest.len()
        )));
    }
    rest.sort_by_key(|&i| (dataset.labels[i], i));
    let base = rest.len() / n_pieces;
    let extra = rest.len() % n_pieces;
    let mut pieces = Vec::with_capacity(n_pieces);
    let mut start = 0;
    for p in 0..n_pieces {
        let len = base + usize::from(p < extra);
        pieces.push(&rest[start..start + len]);
        start += len;
    }
    let mut deal: Vec<usize> = (0..n_pieces).collect();
    deal.shuffle(&mut RngStream::new(seed, 1, 0, Purpose::Partition).rng());
    let shards = deal
        .chunks(shards_per_client)
        .map(|ids| {
            let mut shard: Vec<usize> = ids.iter().flat_map(|&p| pieces[p].iter().copied()).collect();
            shard.sort_unstable();
            shard
        })
        .collect();
    Ok(Partition {
        shards,
        public_indices,
    })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(offset: usize, message: impl Into<alloc::string::String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(offset, "truncated header"))
}

/// Decodes an MNIST-style IDX pair (big-endian, unsigned-byte payload).
/// Pixels are scaled by 1/255 so that byte 255 maps to exactly 1.0. The
/// class count is `max(label) + 1`, at least 2.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(0, format!("images magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let magic = read_u32(labels, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(0, format!("labels magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_images = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let n_labels = read_u32(labels, 4)? as usize;
    if n_images != n_labels {
        return Err(format_err(4, format!("{n_images} images but {n_labels} labels")));
    }
    let dim = rows * cols;
    if dim == 0 {
        return Err(format_err(8, "image dimensions are zero"));
    }
    let pixels = &images[16..];
    if pixels.len() < n_images * dim {
        return Err(format_err(images.len(), format!("image payload truncated, expected {} bytes", 16 + n_images * dim)));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n_labels {
        return Err(format_err(labels.len(), format!("label payload truncated, expected {} bytes", 8 + n_labels)));
    }
    let features = pixels[..n_images * dim].iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<u32> = label_bytes[..n_labels].iter().map(|&l| l as u32).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m as usize + 1).max(2));
    Dataset::new(features, labels, dim, num_classes)
}
