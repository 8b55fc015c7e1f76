//! Round orchestration for FedAvg, DP-FedAvg and Fed-SMP, plus the
//! convergence-bound evaluator and the uplink cost model.

use alloc::vec::Vec;

use rand::seq::index;

use crate::data::{Dataset, Partition, Subset};
use crate::error::{param, Result};
use crate::model::{local_update, LocalOptState, ModelSpec};
use crate::numeric::{clip_l2, ParamVector, Purpose, RngStream};
use crate::privacy::{perturb_masked, Accountant};
use crate::secagg::{secure_sum, FixedPointCodec};
use crate::sparsify::{apply_mask, k_from_ratio, select_randk, select_topk_proxy, MaskVector, SparsifierKind};

/// Bits charged per transmitted coordinate by the cost model.
pub const BITS_PER_COORDINATE: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    FedAvg,
    DpFedAvg,
    FedSmp,
}

impl Scheme {
    pub fn is_private(self) -> bool {
        !matches!(self, Scheme::FedAvg)
    }
}

/// How many SGD iterations a local update runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalPeriod {
    Steps(usize),
    /// `τ = epochs · ⌈|D_i| / B⌉`, resolved per shard.
    Epochs(usize),
}

impl LocalPeriod {
    pub fn steps(self, shard_len: usize, batch_size: usize) -> usize {
        match self {
            LocalPeriod::Steps(s) => s,
            LocalPeriod::Epochs(e) => LocalOptState::steps_for_epochs(e, shard_len, batch_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Used by Fed-SMP only.
    pub sparsifier: SparsifierKind,
    /// `p = k/d`, Fed-SMP only.
    pub compression_ratio: f64,
    pub clip: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub n_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_period: LocalPeriod,
    /// Learning rate is multiplied by `lr_decay` every `lr_decay_period` rounds.
    pub lr_decay: f64,
    pub lr_decay_period: usize,
    pub codec: FixedPointCodec,
}

impl SchemeConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_clients == 0 || self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            return Err(param("need 1 <= clients_per_round <= n_clients"));
        }
        if self.rounds == 0 {
            return Err(param("rounds must be at least 1"));
        }
        if self.scheme.is_private() {
            if !(self.clip > 0.0) || !self.clip.is_finite() {
                return Err(param("clip must be positive and finite"));
            }
            if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
                return Err(param("noise multiplier must be finite and non-negative"));
            }
            if !(self.delta > 0.0 && self.delta < 1.0) {
                return Err(param("delta must lie in (0, 1)"));
            }
        }
        if self.scheme == Scheme::FedSmp {
            k_from_ratio(self.compression_ratio, d)?;
        }
        if !(self.lr_decay > 0.0) || self.lr_decay_period == 0 {
            return Err(param("lr_decay must be positive and lr_decay_period at least 1"));
        }
        if matches!(self.local_period, LocalPeriod::Steps(0) | LocalPeriod::Epochs(0)) {
            return Err(param("local period must be at least 1"));
        }
        self.codec.validate(self.clients_per_round)?;
        self.opt_at(0, 1).validate()
    }

    /// `q = r / n`.
    pub fn sampling_ratio(&self) -> f64 {
        self.clients_per_round as f64 / self.n_clients as f64
    }

    /// Coordinates each client sends per round.
    pub fn k(&self, d: usize) -> usize {
        match self.scheme {
            Scheme::FedSmp => k_from_ratio(self.compression_ratio, d).unwrap_or(d),
            _ => d,
        }
    }

    pub fn learning_rate_at(&self, round: usize) -> f64 {
        let decays = (round / self.lr_decay_period) as i32;
        self.learning_rate * libm::pow(self.lr_decay, f64::from(decays))
    }

    fn opt_at(&self, round: usize, steps: usize) -> LocalOptState {
        LocalOptState {
            learning_rate: self.learning_rate_at(round),
            momentum: self.momentum,
            batch_size: self.batch_size,
            local_steps: steps,
        }
    }
}

/// Metrics for one completed round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean loss of the new global model over all client training data.
    pub loss: f64,
    /// Accuracy of the new global model on the evaluation set.
    pub accuracy: f64,
    /// Cumulative `ε` at the configured `δ`; `+∞` without a DP guarantee.
    pub epsilon: f64,
    /// Uplink bits sent by all clients so far.
    pub uplink_bits: u64,
    /// Fraction of this round's clients whose update was scaled down by clipping.
    pub clip_fraction: f64,
    /// Entries clamped by the fixed-point encoder this round.
    pub saturation: usize,
    /// Filled in by callers that measure time; always 0 here.
    pub wall_ms: u64,
}

/// Uniform size-`r` subset of `0..n`, sorted.
pub fn sample_clients(n: usize, r: usize, stream: &RngStream) -> Result<Vec<usize>> {
    if r == 0 || r > n {
        return Err(param("need 1 <= r <= n"));
    }
    let mut ids = if r == n {
        (0..n).collect()
    } else {
        index::sample(&mut stream.rng(), n, r).into_vec()
    };
    ids.sort_unstable();
    Ok(ids)
}

/// Expected uplink bits per client: `32·k·T·r/n` for Fed-SMP and
/// `32·d·T·r/n` otherwise.
pub fn comm_cost(scheme: Scheme, k: usize, d: usize, rounds: usize, r: usize, n: usize) -> f64 {
    let coords = if scheme == Scheme::FedSmp { k } else { d };
    (BITS_PER_COORDINATE * coords as u64 * rounds as u64 * r as u64) as f64 / n as f64
}

/// Simulation state for one run.
pub struct Federation<'a> {
    model: ModelSpec,
    config: SchemeConfig,
    train: &'a Dataset,
    partition: &'a Partition,
    eval: &'a Dataset,
    seed: u64,
    params: ParamVector,
    accountant: Option<Accountant>,
    uplink_bits: u64,
    train_indices: Vec<usize>,
    eval_indices: Vec<usize>,
    proxy_steps: usize,
    round: usize,
}

impl<'a> Federation<'a> {
    pub fn new(
        model: ModelSpec,
        config: SchemeConfig,
        train: &'a Dataset,
        partition: &'a Partition,
        eval: &'a Dataset,
        seed: u64,
    ) -> Result<Self> {
        model.validate()?;
        let d = model.num_params();
        config.validate(d)?;
        partition.validate(train.len())?;
        if partition.n_clients() != config.n_clients {
            return Err(param("partition and config disagree on the number of clients"));
        }
        if eval.is_empty() {
            return Err(crate::error::data("evaluation set is empty"));
        }
        if config.scheme == Scheme::FedSmp
            && config.sparsifier == SparsifierKind::TopK
            && config.k(d) < d
            && partition.public_indices.is_empty()
        {
            return Err(crate::error::data("top-k selection needs a nonempty public dataset"));
        }
        let accountant = if config.scheme.is_private() {
            Some(Accountant::new(config.noise_multiplier, config.sampling_ratio(), config.delta)?)
        } else {
            None
        };
        let mut train_indices: Vec<usize> = partition.shards.iter().flatten().copied().collect();
        train_indices.sort_unstable();
        let largest_shard = partition.shards.iter().map(Vec::len).max().unwrap_or(1);
        let proxy_steps = config.local_period.steps(largest_shard, config.batch_size);
        Ok(Self {
            params: model.init_params(&RngStream::new(seed, 0, 0, Purpose::ModelInit)),
            model,
            config,
            train,
            partition,
            eval_indices: (0..eval.len()).collect(),
            eval,
            seed,
            accountant,
            uplink_bits: 0,
            train_indices,
            proxy_steps,
            round: 0,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn accountant(&self) -> Option<&Accountant> {
        self.accountant.as_ref()
    }

    pub fn uplink_bits(&self) -> u64 {
        self.uplink_bits
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    /// The round's shared coordinate mask.
    pub fn select_mask(&self, round: usize) -> Result<MaskVector> {
        let d = self.model.num_params();
        let k = self.config.k(d);
        if self.config.scheme != Scheme::FedSmp || k == d {
            return Ok(MaskVector::full(d));
        }
        match self.config.sparsifier {
            SparsifierKind::RandK => select_randk(d, k, &self.stream(round, 0, Purpose::MaskSelection)),
            SparsifierKind::TopK => select_topk_proxy(
                &self.model,
                &self.params,
                &Subset::new(self.train, &self.partition.public_indices),
                &self.config.opt_at(round, self.proxy_steps),
                k,
                &self.stream(round, 0, Purpose::ProxyTraining),
            ),
        }
    }

    fn stream(&self, round: usize, client: usize, purpose: Purpose) -> RngStream {
        RngStream::new(self.seed, round as u64, client as u64, purpose)
    }

    /// One client's contribution before encoding: the vector on the mask
    /// coordinates (length `k`) and whether clipping scaled it down.
    pub fn client_payload(&self, round: usize, client: usize, mask: &MaskVector) -> Result<(Vec<f64>, bool)> {
        let shard = &self.partition.shards[client];
        let steps = self.config.local_period.steps(shard.len(), self.config.batch_size);
        let delta = local_update(
            &self.model,
            &self.params,
            &Subset::new(self.train, shard),
            &self.config.opt_at(round, steps),
            &self.stream(round, client, Purpose::LocalTraining),
        )?;
        let c = &self.config;
        let (update, clipped) = match c.scheme {
            Scheme::FedAvg => (delta, false),
            Scheme::DpFedAvg | Scheme::FedSmp => {
                let sparse = if c.scheme == Scheme::FedSmp {
                    apply_mask(&delta, mask, c.sparsifier)?
                } else {
                    delta
                };
                let clipped = sparse.l2_norm() > c.clip;
                let bounded = clip_l2(&sparse, c.clip)?;
                let noisy = perturb_masked(
                    &bounded,
                    mask,
                    c.clip,
                    c.noise_multiplier,
                    c.clients_per_round,
                    &self.stream(round, client, Purpose::Noise),
                )?;
                (noisy, clipped)
            }
        };
        Ok((mask.gather(&update), clipped))
    }

    /// Executes the next round and returns its metrics.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let round = self.round;
        let c = &self.config;
        let clients = sample_clients(
            c.n_clients,
            c.clients_per_round,
            &self.stream(round, 0, Purpose::ClientSampling),
        )?;
        let mask = self.select_mask(round)?;
        let mut payloads = Vec::with_capacity(clients.len());
        let mut n_clipped = 0usize;
        for &client in &clients {
            let (payload, clipped) = self.client_payload(round, client, &mask)?;
            n_clipped += usize::from(clipped);
            payloads.push(payload);
        }
        let (sum, stats) = secure_sum(&clients, &payloads, round as u64, self.seed, &c.codec)?;
        let r = clients.len() as f64;
        for (&i, s) in mask.indices().iter().zip(sum.iter()) {
            self.params[i] -= s / r;
        }
        self.uplink_bits += BITS_PER_COORDINATE * stats.coordinates_sent as u64;
        let epsilon = match &mut self.accountant {
            Some(acc) => {
                acc.step();
                acc.epsilon().0
            }
            None => f64::INFINITY,
        };
        self.round += 1;
        Ok(RoundRecord {
            round,
            loss: self.model.loss(&self.params, &Subset::new(self.train, &self.train_indices))?,
            accuracy: self.model.accuracy(&self.params, &Subset::new(self.eval, &self.eval_indices))?,
            epsilon,
            uplink_bits: self.uplink_bits,
            clip_fraction: n_clipped as f64 / r,
            saturation: stats.saturated,
            wall_ms: 0,
        })
    }

    /// Runs all configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        (self.round..self.config.rounds).map(|_| self.run_round()).collect()
    }
}

/// Problem constants and run settings for the non-convex convergence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// `L`.
    pub smoothness: f64,
    /// `ζ̄²`.
    pub variance: f64,
    /// `β² ≥ 1`.
    pub beta_sq: f64,
    /// `κ² ≥ 0`.
    pub kappa_sq: f64,
    /// `f(θ⁰) − f*`.
    pub e0: f64,
    /// Top-k constant, conventionally 1/3.
    pub gamma: f64,
    pub learning_rate: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub k: usize,
    pub d: usize,
    pub clip: f64,
    pub sigma: f64,
    pub clients_per_round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub total: f64,
    /// `8e0/(Tητ) + 8ητL(3κ² + 2ζ̄²)`.
    pub optimization_term: f64,
    /// `(8ητL(2κ² + ζ̄²) + ζ′)·φ_k`.
    pub compression_term: f64,
    /// `4LkC²σ² / (ητr²)`.
    pub privacy_term: f64,
    /// `min{1/(24τL(φ_k+1)β²), 1/(4τL√(4β²+2)), 1/(12τL)}`.
    pub learning_rate_limit: f64,
    /// False when the learning rate exceeds the limit; the bound is then advisory.
    pub learning_rate_ok: bool,
}

/// Evaluates the average squared-gradient-norm bound of Fed-SMP.
///
/// `φ_k = 1 − k/d`, `ζ′ = 4ζ̄²/γ` for top-k; `φ_k = d/k − 1`, `ζ′ = 0` for
/// rand-k.
pub fn theorem2_bound(inputs: &BoundInputs, kind: SparsifierKind) -> Result<BoundReport> {
    let b = inputs;
    if !(b.beta_sq >= 1.0) || !(b.kappa_sq >= 0.0) || !(b.gamma > 0.0 && b.gamma < 0.5) {
        return Err(param("need beta^2 >= 1, kappa^2 >= 0 and gamma in (0, 1/2)"));
    }
    if b.k == 0 || b.k > b.d || b.local_steps == 0 || b.rounds == 0 || b.clients_per_round == 0 {
        return Err(param("need 1 <= k <= d and positive tau, T, r"));
    }
    if !(b.learning_rate > 0.0) || !(b.smoothness > 0.0) {
        return Err(param("learning rate and smoothness must be positive"));
    }
    let (k, d) = (b.k as f64, b.d as f64);
    let (phi, zeta_prime) = match kind {
        SparsifierKind::TopK => (1.0 - k / d, 4.0 * b.variance / b.gamma),
        SparsifierKind::RandK => (d / k - 1.0, 0.0),
    };
    let (eta, tau, l) = (b.learning_rate, b.local_steps as f64, b.smoothness);
    let t = b.rounds as f64;
    let r = b.clients_per_round as f64;
    let optimization_term = 8.0 * b.e0 / (t * eta * tau) + 8.0 * eta * tau * l * (3.0 * b.kappa_sq + 2.0 * b.variance);
    let compression_term = (8.0 * eta * tau * l * (2.0 * b.kappa_sq + b.variance) + zeta_prime) * phi;
    let privacy_term = 4.0 * l * k * b.clip * b.clip * b.sigma * b.sigma / (eta * tau * r * r);
    let learning_rate_limit = (1.0 / (24.0 * tau * l * (phi + 1.0) * b.beta_sq))
        .min(1.0 / (4.0 * tau * l * libm::sqrt(4.0 * b.beta_sq + 2.0)))
        .min(1.0 / (12.0 * tau * l));
    Ok(BoundReport {
        total: optimization_term + compression_term + privacy_term,
        optimization_term,
        compression_term,
        privacy_term,
        learning_rate_limit,
        learning_rate_ok: eta <= learning_rate_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_clients_examples() {
        let s = RngStream::new(1, 0, 0, Purpose::ClientSampling);
        assert_eq!(sample_clients(5, 5, &s).unwrap(), [0, 1, 2, 3, 4]);
        assert!(sample_clients(5, 6, &s).is_err());
        assert!(sample_clients(5, 0, &s).is_err());
        let ids = sample_clients(100, 30, &s).unwrap();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn inclusion_probability() {
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for t in 0..draws {
            for c in sample_clients(5, 2, &RngStream::new(9, t, 0, Purpose::ClientSampling)).unwrap() {
                counts[c] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.4).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn comm_cost_examples() {
        assert_eq!(comm_cost(Scheme::FedSmp, 1000, 10_000, 100, 1, 100), 32_000.0);
        assert_eq!(comm_cost(Scheme::FedSmp, 50, 50, 7, 3, 9), comm_cost(Scheme::DpFedAvg, 1, 50, 7, 3, 9));
        assert_eq!(comm_cost(Scheme::DpFedAvg, 1, 80, 20, 2, 10), 2.0 * comm_cost(Scheme::DpFedAvg, 1, 80, 10, 2, 10));
    }

    fn inputs() -> BoundInputs {
        BoundInputs {
            smoothness: 2.0,
            variance: 0.5,
            beta_sq: 1.5,
            kappa_sq: 0.2,
            e0: 3.0,
            gamma: 1.0 / 3.0,
            learning_rate: 1e-3,
            local_steps: 5,
            rounds: 100,
            k: 40,
            d: 400,
            clip: 1.0,
            sigma: 1.2,
            clients_per_round: 10,
        }
    }

    #[test]
    fn bound_parameter_errors() {
        assert!(theorem2_bound(&BoundInputs { beta_sq: 0.5, ..inputs() }, SparsifierKind::TopK).is_err());
        assert!(theorem2_bound(&BoundInputs { gamma: 0.5, ..inputs() }, SparsifierKind::TopK).is_err());
        assert!(theorem2_bound(&BoundInputs { k: 401, ..inputs() }, SparsifierKind::RandK).is_err());
    }

    #[test]
    fn bound_learning_rate_flag() {
        let ok = theorem2_bound(&inputs(), SparsifierKind::TopK).unwrap();
        assert!(ok.learning_rate_ok);
        let bad = theorem2_bound(&BoundInputs { learning_rate: 1.0, ..inputs() }, SparsifierKind::TopK).unwrap();
        assert!(!bad.learning_rate_ok && bad.total.is_finite());
        // rand-k at k = d/10 has φ = 9, making the first constant the binding one.
        let rk = theorem2_bound(&inputs(), SparsifierKind::RandK).unwrap();
        assert_eq!(rk.learning_rate_limit, 1.0 / (24.0 * 5.0 * 2.0 * 10.0 * 1.5));
    }
}
