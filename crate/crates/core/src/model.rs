//! Small differentiable classifiers with hand-written gradients and the
//! local momentum-SGD routine shared by clients and the top-k proxy.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Subset};
use crate::error::{data, param, Result};
use crate::numeric::{ParamVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Multinomial logistic regression.
    Logistic,
    /// One hidden tanh layer followed by a softmax layer.
    Mlp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    /// Ignored for [`Architecture::Logistic`].
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Logistic,
            input_dim,
            hidden_dim: 0,
            num_classes,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Mlp1,
            input_dim,
            hidden_dim,
            num_classes,
        }
    }

    /// Parameter count `d`.
    ///
    /// Logistic: `C·(D+1)`. MLP: `H·(D+1) + C·(H+1)`.
    pub fn num_params(&self) -> usize {
        match self.architecture {
            Architecture::Logistic => self.num_classes * (self.input_dim + 1),
            Architecture::Mlp1 => {
                self.hidden_dim * (self.input_dim + 1) + self.num_classes * (self.hidden_dim + 1)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(param("model needs input_dim >= 1 and num_classes >= 2"));
        }
        if self.architecture == Architecture::Mlp1 && self.hidden_dim == 0 {
            return Err(param("mlp1 model needs hidden_dim >= 1"));
        }
        Ok(())
    }

    /// Initial parameters: zeros for logistic regression, scaled Gaussian
    /// weights and zero biases for the MLP.
    pub fn init_params(&self, stream: &RngStream) -> ParamVector {
        let mut params = ParamVector::zeros(self.num_params());
        if self.architecture == Architecture::Mlp1 {
            let (d_in, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
            let mut rng = stream.rng();
            let s1 = 1.0 / libm::sqrt(d_in as f64);
            for w in &mut params[..h * d_in] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = s1 * z;
            }
            let s2 = 1.0 / libm::sqrt(h as f64);
            let w2 = h * (d_in + 1);
            for w in &mut params[w2..w2 + c * h] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = s2 * z;
            }
        }
        params
    }

    fn check(&self, params: &[f64], batch: &Subset<'_>) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(param("parameter vector length does not match the model"));
        }
        if batch.dataset.input_dim != self.input_dim {
            return Err(param("dataset feature dimension does not match the model"));
        }
        if batch.dataset.num_classes > self.num_classes {
            return Err(param("dataset has more classes than the model"));
        }
        if batch.is_empty() {
            return Err(data("batch is empty"));
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, params: &[f64], batch: &Subset<'_>) -> Result<(f64, ParamVector)> {
        self.check(params, batch)?;
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        let mut scratch = Scratch::new(self);
        for &i in batch.indices {
            total += self.accumulate(params, batch.dataset.row(i), batch.dataset.labels[i], &mut grad, &mut scratch);
        }
        let n = batch.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((total / n, ParamVector::new(grad)))
    }

    /// Mean cross-entropy without the gradient.
    pub fn loss(&self, params: &[f64], batch: &Subset<'_>) -> Result<f64> {
        self.check(params, batch)?;
        let mut scratch = Scratch::new(self);
        let total: f64 = batch
            .indices
            .iter()
            .map(|&i| {
                self.forward(params, batch.dataset.row(i), &mut scratch);
                log_sum_exp(&scratch.logits) - scratch.logits[batch.dataset.labels[i] as usize]
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Fraction of the batch whose arg-max prediction equals the label.
    pub fn accuracy(&self, params: &[f64], batch: &Subset<'_>) -> Result<f64> {
        self.check(params, batch)?;
        let mut scratch = Scratch::new(self);
        let correct = batch
            .indices
            .iter()
            .filter(|&&i| {
                self.forward(params, batch.dataset.row(i), &mut scratch);
                argmax(&scratch.logits) == batch.dataset.labels[i] as usize
            })
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }

    fn forward(&self, params: &[f64], x: &[f64], s: &mut Scratch) {
        let (d_in, c) = (self.input_dim, self.num_classes);
        match self.architecture {
            Architecture::Logistic => {
                let bias = &params[c * d_in..];
                for k in 0..c {
                    s.logits[k] = dot(&params[k * d_in..(k + 1) * d_in], x) + bias[k];
                }
            }
            Architecture::Mlp1 => {
                let h = self.hidden_dim;
                let b1 = h * d_in;
                for j in 0..h {
                    s.hidden[j] = libm::tanh(dot(&params[j * d_in..(j + 1) * d_in], x) + params[b1 + j]);
                }
                let w2 = h * (d_in + 1);
                let b2 = w2 + c * h;
                for k in 0..c {
                    s.logits[k] = dot(&params[w2 + k * h..w2 + (k + 1) * h], &s.hidden) + params[b2 + k];
                }
            }
        }
    }

    /// Adds the per-example gradient into `grad` and returns the loss.
    fn accumulate(&self, params: &[f64], x: &[f64], label: u32, grad: &mut [f64], s: &mut Scratch) -> f64 {
        self.forward(params, x, s);
        let (d_in, c) = (self.input_dim, self.num_classes);
        let lse = log_sum_exp(&s.logits);
        let loss = lse - s.logits[label as usize];
        for k in 0..c {
            s.delta[k] = libm::exp(s.logits[k] - lse);
        }
        s.delta[label as usize] -= 1.0;
        match self.architecture {
            Architecture::Logistic => {
                for k in 0..c {
                    let dk = s.delta[k];
                    for (g, xj) in grad[k * d_in..(k + 1) * d_in].iter_mut().zip(x) {
                        *g += dk * xj;
                    }
                    grad[c * d_in + k] += dk;
                }
            }
            Architecture::Mlp1 => {
                let h = self.hidden_dim;
                let b1 = h * d_in;
                let w2 = h * (d_in + 1);
                let b2 = w2 + c * h;
                s.dhidden.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let dk = s.delta[k];
                    let row = w2 + k * h;
                    for j in 0..h {
                        grad[row + j] += dk * s.hidden[j];
                        s.dhidden[j] += dk * params[row + j];
                    }
                    grad[b2 + k] += dk;
                }
                for j in 0..h {
                    let dj = s.dhidden[j] * (1.0 - s.hidden[j] * s.hidden[j]);
                    for (g, xi) in grad[j * d_in..(j + 1) * d_in].iter_mut().zip(x) {
                        *g += dj * xi;
                    }
                    grad[b1 + j] += dj;
                }
            }
        }
        loss
    }
}

struct Scratch {
    logits: Vec<f64>,
    delta: Vec<f64>,
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            logits: vec![0.0; spec.num_classes],
            delta: vec![0.0; spec.num_classes],
            hidden: vec![0.0; spec.hidden_dim],
            dhidden: vec![0.0; spec.hidden_dim],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Local optimizer settings. The momentum buffer is not stored: every call
/// to [`local_update`] starts from a zero buffer, matching one communication
/// round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOptState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Number of SGD iterations `τ`.
    pub local_steps: usize,
}

impl LocalOptState {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(param("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(param("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.local_steps == 0 {
            return Err(param("batch_size and local_steps must be at least 1"));
        }
        Ok(())
    }

    /// `τ = epochs · ⌈shard_len / B⌉`.
    pub fn steps_for_epochs(epochs: usize, shard_len: usize, batch_size: usize) -> usize {
        epochs * shard_len.div_ceil(batch_size)
    }
}

/// Runs `τ` heavy-ball momentum steps (`v ← βv + g`, `θ ← θ − ηv`) from
/// `start` and returns `start − θ_τ`.
///
/// Mini-batches are drawn without replacement; the shard order is reshuffled
/// from `stream` at the start of every epoch. The last batch of an epoch may
/// be short.
pub fn local_update(
    model: &ModelSpec,
    start: &[f64],
    shard: &Subset<'_>,
    opt: &LocalOptState,
    stream: &RngStream,
) -> Result<ParamVector> {
    if shard.is_empty() {
        return Err(data("client shard is empty"));
    }
    opt.validate()?;
    let mut rng = stream.rng();
    let mut order: Vec<usize> = shard.indices.to_vec();
    let mut pos = order.len();
    let mut theta = ParamVector::from(start);
    let mut velocity = ParamVector::zeros(start.len());
    for _ in 0..opt.local_steps {
        if pos >= order.len() {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let end = (pos + opt.batch_size).min(order.len());
        let batch = Subset::new(shard.dataset, &order[pos..end]);
        pos = end;
        let (_, grad) = model.loss_and_grad(&theta, &batch)?;
        velocity.scale(opt.momentum);
        velocity.axpy(1.0, &grad);
        theta.axpy(-opt.learning_rate, &velocity);
    }
    Ok(ParamVector::from(start).sub(&theta))
}

/// Subset that covers a whole dataset.
pub fn all_indices(dataset: &Dataset) -> Vec<usize> {
    (0..dataset.len()).collect()
}
