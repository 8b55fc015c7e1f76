//! JSON experiment configuration with a strict schema.

use std::path::{Path, PathBuf};

use fedsmp_core::federation::{LocalPeriod, Scheme, SchemeConfig};
use fedsmp_core::model::{Architecture, ModelSpec};
use fedsmp_core::privacy::default_delta;
use fedsmp_core::secagg::FixedPointCodec;
use fedsmp_core::sparsify::SparsifierKind;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub scheme: SchemeSection,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub secagg: SecAggConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
    /// Write measured per-round wall time into the `ms` column. Off by
    /// default so that reruns produce identical files.
    #[serde(default)]
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic(SyntheticConfig),
    Idx(IdxConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub class_sep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    Iid {
        #[serde(default = "default_public_fraction")]
        public_fraction: f64,
    },
    LabelShards {
        shards_per_client: usize,
        #[serde(default = "default_public_fraction")]
        public_fraction: f64,
    },
}

fn default_public_fraction() -> f64 {
    0.02
}

impl PartitionConfig {
    pub fn public_fraction(&self) -> f64 {
        match self {
            PartitionConfig::Iid { public_fraction } | PartitionConfig::LabelShards { public_fraction, .. } => {
                *public_fraction
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureName {
    Logistic,
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: ArchitectureName,
    #[serde(default)]
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Fedavg,
    DpFedavg,
    FedSmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsifierName {
    RandK,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    #[default]
    Accountant,
    Theorem1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub scheme: SchemeName,
    #[serde(default = "default_sparsifier")]
    pub sparsifier: SparsifierName,
    #[serde(default = "one")]
    pub compression_ratio: f64,
    pub n_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    #[serde(default = "one")]
    pub clip: f64,
    /// Either this or `target_epsilon` for DP schemes.
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
    #[serde(default)]
    pub target_epsilon: Option<f64>,
    #[serde(default)]
    pub calibration: CalibrationMethod,
    /// Defaults to `n_clients^{-1.1}`.
    #[serde(default)]
    pub delta: Option<f64>,
}

fn default_sparsifier() -> SparsifierName {
    SparsifierName::TopK
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub local_steps: Option<usize>,
    #[serde(default)]
    pub local_epochs: Option<usize>,
    #[serde(default = "one")]
    pub lr_decay: f64,
    #[serde(default = "one_usize")]
    pub lr_decay_period: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecAggConfig {
    pub scale_bits: u32,
    pub modulus_bits: u32,
    pub clamp_range: f64,
}

impl Default for SecAggConfig {
    fn default() -> Self {
        let c = FixedPointCodec::default();
        Self {
            scale_bits: c.scale_bits,
            modulus_bits: c.modulus_bits,
            clamp_range: c.clamp_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub compression_ratios: Vec<f64>,
    #[serde(default)]
    pub noise_multipliers: Vec<f64>,
    #[serde(default)]
    pub target_epsilons: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// Noise setting of a single run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSetting {
    Sigma(f64),
    TargetEpsilon(f64),
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config {
            key: "<json>".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if config.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.output_dir = parent.join(&config.output_dir);
            }
        }
        Ok(config)
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.model.architecture {
            ArchitectureName::Logistic => ModelSpec::logistic(input_dim, num_classes),
            ArchitectureName::Mlp1 => ModelSpec {
                architecture: Architecture::Mlp1,
                input_dim,
                hidden_dim: self.model.hidden_dim,
                num_classes,
            },
        }
    }

    pub fn delta(&self) -> f64 {
        self.scheme.delta.unwrap_or_else(|| default_delta(self.scheme.n_clients))
    }

    /// The base noise setting from the `scheme` section.
    pub fn base_noise(&self) -> NoiseSetting {
        match (self.scheme.noise_multiplier, self.scheme.target_epsilon) {
            (_, Some(eps)) => NoiseSetting::TargetEpsilon(eps),
            (Some(s), None) => NoiseSetting::Sigma(s),
            (None, None) => NoiseSetting::Sigma(0.0),
        }
    }

    /// Core scheme settings for one run with a resolved noise multiplier.
    pub fn scheme_config(&self, compression_ratio: f64, sigma: f64) -> SchemeConfig {
        let s = &self.scheme;
        let o = &self.optimizer;
        SchemeConfig {
            scheme: match s.scheme {
                SchemeName::Fedavg => Scheme::FedAvg,
                SchemeName::DpFedavg => Scheme::DpFedAvg,
                SchemeName::FedSmp => Scheme::FedSmp,
            },
            sparsifier: match s.sparsifier {
                SparsifierName::RandK => SparsifierKind::RandK,
                SparsifierName::TopK => SparsifierKind::TopK,
            },
            compression_ratio,
            clip: s.clip,
            noise_multiplier: sigma,
            delta: self.delta(),
            n_clients: s.n_clients,
            clients_per_round: s.clients_per_round,
            rounds: s.rounds,
            learning_rate: o.learning_rate,
            momentum: o.momentum,
            batch_size: o.batch_size,
            local_period: match (o.local_steps, o.local_epochs) {
                (Some(steps), _) => LocalPeriod::Steps(steps),
                (None, Some(epochs)) => LocalPeriod::Epochs(epochs),
                (None, None) => LocalPeriod::Epochs(1),
            },
            lr_decay: o.lr_decay,
            lr_decay_period: o.lr_decay_period,
            codec: FixedPointCodec {
                scale_bits: self.secagg.scale_bits,
                modulus_bits: self.secagg.modulus_bits,
                clamp_range: self.secagg.clamp_range,
            },
        }
    }

    /// Checks every cross-field constraint and names the offending key.
    pub fn validate(&self) -> Result<()> {
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            if s.n_train == 0 || s.input_dim == 0 || s.num_classes < 2 || s.n_test == 0 {
                return Err(config_err("dataset.synthetic", "n_train, n_test, input_dim >= 1 and num_classes >= 2 required"));
            }
            if !(s.class_sep >= 0.0) || !s.class_sep.is_finite() {
                return Err(config_err("dataset.synthetic.class_sep", "must be finite and non-negative"));
            }
        }
        let pf = self.partition.public_fraction();
        if !(0.0..1.0).contains(&pf) {
            return Err(config_err("partition.public_fraction", "must lie in [0, 1)"));
        }
        if let PartitionConfig::LabelShards { shards_per_client: 0, .. } = self.partition {
            return Err(config_err("partition.shards_per_client", "must be at least 1"));
        }
        if self.model.architecture == ArchitectureName::Mlp1 && self.model.hidden_dim == 0 {
            return Err(config_err("model.hidden_dim", "mlp1 needs hidden_dim >= 1"));
        }
        let s = &self.scheme;
        if s.n_clients == 0 {
            return Err(config_err("scheme.n_clients", "must be at least 1"));
        }
        if s.clients_per_round == 0 || s.clients_per_round > s.n_clients {
            return Err(config_err("scheme.clients_per_round", "must lie in [1, n_clients]"));
        }
        if s.rounds == 0 {
            return Err(config_err("scheme.rounds", "must be at least 1"));
        }
        check_ratio("scheme.compression_ratio", s.compression_ratio)?;
        if !(s.clip > 0.0) || !s.clip.is_finite() {
            return Err(config_err("scheme.clip", "must be positive and finite"));
        }
        if s.noise_multiplier.is_some() && s.target_epsilon.is_some() {
            return Err(config_err("scheme.target_epsilon", "give either noise_multiplier or target_epsilon, not both"));
        }
        if let Some(sigma) = s.noise_multiplier {
            check_sigma("scheme.noise_multiplier", sigma)?;
        }
        if let Some(eps) = s.target_epsilon {
            check_eps("scheme.target_epsilon", eps)?;
        }
        if let Some(delta) = s.delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(config_err("scheme.delta", "must lie in (0, 1)"));
            }
        }
        if s.scheme == SchemeName::FedSmp && s.sparsifier == SparsifierName::TopK && pf == 0.0 {
            return Err(config_err("partition.public_fraction", "top_k needs a nonempty public dataset"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0) || !o.learning_rate.is_finite() {
            return Err(config_err("optimizer.learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(config_err("optimizer.momentum", "must lie in [0, 1)"));
        }
        if o.batch_size == 0 {
            return Err(config_err("optimizer.batch_size", "must be at least 1"));
        }
        if o.local_steps.is_some() && o.local_epochs.is_some() {
            return Err(config_err("optimizer.local_epochs", "give either local_steps or local_epochs, not both"));
        }
        if o.local_steps == Some(0) || o.local_epochs == Some(0) {
            return Err(config_err("optimizer.local_steps", "local period must be at least 1"));
        }
        if !(o.lr_decay > 0.0) || o.lr_decay_period == 0 {
            return Err(config_err("optimizer.lr_decay", "lr_decay must be positive and lr_decay_period >= 1"));
        }
        self.scheme_config(1.0, 0.0)
            .codec
            .validate(s.clients_per_round)
            .map_err(|e| config_err("secagg", e.to_string()))?;
        for &p in &self.sweep.compression_ratios {
            check_ratio("sweep.compression_ratios", p)?;
        }
        for &sigma in &self.sweep.noise_multipliers {
            check_sigma("sweep.noise_multipliers", sigma)?;
        }
        for &eps in &self.sweep.target_epsilons {
            check_eps("sweep.target_epsilons", eps)?;
        }
        if !self.sweep.noise_multipliers.is_empty() && !self.sweep.target_epsilons.is_empty() {
            return Err(config_err("sweep.target_epsilons", "give either noise_multipliers or target_epsilons, not both"));
        }
        Ok(())
    }
}

fn check_ratio(key: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(config_err(key, "compression ratio must lie in (0, 1]"));
    }
    Ok(())
}

fn check_sigma(key: &str, sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(config_err(key, "noise multiplier must be finite and non-negative"));
    }
    Ok(())
}

fn check_eps(key: &str, eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(config_err(key, "target epsilon must be positive and finite"));
    }
    Ok(())
}
