//! Runs experiment configs and persists per-round metrics.
//!
//! Output layout under `output_dir`:
//!
//! - `runs/<label>_seed<seed>.csv`: one row per round with columns
//!   `t,loss,acc,eps,bits,clip_frac,saturation,ms`.
//! - `summary.csv`: one row per (sweep point, seed).
//! - `aggregate.csv`: one row per sweep point with mean and sample standard
//!   deviation of the best accuracy across seeds.

use std::path::Path;
use std::time::Instant;

use fedsmp_core::data::{partition_iid, partition_label_shards, synth_classification, Dataset, Partition};
use fedsmp_core::federation::{Federation, RoundRecord, Scheme};
use fedsmp_core::privacy::{calibrate_sigma_accountant, calibrate_sigma_theorem1, DEFAULT_SIGMA_BRACKET};
use rayon::prelude::*;

use crate::config::{CalibrationMethod, DatasetConfig, ExperimentConfig, NoiseSetting, PartitionConfig, SchemeName};
use crate::error::{HarnessError, Result};
use crate::idx::load_idx;

pub const ROUND_HEADER: [&str; 8] = ["t", "loss", "acc", "eps", "bits", "clip_frac", "saturation", "ms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// The base point of the `scheme` section, once per seed.
    Run,
    /// Cartesian product of the sweep lists and seeds.
    Sweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub label: String,
    pub compression_ratio: f64,
    pub noise: NoiseSetting,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub compression_ratio: f64,
    pub k: usize,
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Max over rounds of evaluation accuracy.
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub final_epsilon: f64,
    pub total_uplink_bits: u64,
    /// Average uplink per client over the whole run, `total / n`.
    pub bits_per_client: f64,
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub label: String,
    pub compression_ratio: f64,
    pub sigma: f64,
    pub n_seeds: usize,
    pub mean_best_accuracy: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single seed.
    pub std_best_accuracy: f64,
    pub final_epsilon: f64,
    pub bits_per_client: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub runs: Vec<RunSummary>,
    pub points: Vec<PointSummary>,
}

/// Training and evaluation data for an experiment.
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(config: &ExperimentConfig) -> Result<ExperimentData> {
    match &config.dataset {
        DatasetConfig::Synthetic(s) => {
            let all = synth_classification(s.seed, s.n_train + s.n_test, s.input_dim, s.num_classes, s.class_sep)?;
            let train_idx: Vec<usize> = (0..s.n_train).collect();
            let test_idx: Vec<usize> = (s.n_train..s.n_train + s.n_test).collect();
            Ok(ExperimentData {
                train: all.select(&train_idx),
                test: all.select(&test_idx),
            })
        }
        DatasetConfig::Idx(paths) => {
            let train = load_idx(&paths.train_images, &paths.train_labels)?;
            let mut test = load_idx(&paths.test_images, &paths.test_labels)?;
            if test.input_dim != train.input_dim {
                return Err(HarnessError::Config {
                    key: "dataset.idx".into(),
                    message: "train and test images have different dimensions".into(),
                });
            }
            let classes = train.num_classes.max(test.num_classes);
            test.num_classes = classes;
            let mut train = train;
            train.num_classes = classes;
            Ok(ExperimentData { train, test })
        }
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

fn label_for(config: &ExperimentConfig, p: f64, noise: NoiseSetting) -> String {
    let scheme = match config.scheme.scheme {
        SchemeName::Fedavg => return "fedavg".into(),
        SchemeName::DpFedavg => "dp_fedavg".to_string(),
        SchemeName::FedSmp => {
            let kind = match config.scheme.sparsifier {
                crate::config::SparsifierName::RandK => "rand_k",
                crate::config::SparsifierName::TopK => "top_k",
            };
            format!("fed_smp_{kind}_p{}", fmt_f(p))
        }
    };
    match noise {
        NoiseSetting::Sigma(s) => format!("{scheme}_sigma{}", fmt_f(s)),
        NoiseSetting::TargetEpsilon(e) => format!("{scheme}_eps{}", fmt_f(e)),
    }
}

/// Enumerates the runs for `mode`, in output order.
pub fn plan_runs(config: &ExperimentConfig, mode: Mode) -> Vec<RunSpec> {
    let seeds = if config.sweep.seeds.is_empty() { vec![0] } else { config.sweep.seeds.clone() };
    let (ratios, noises) = match mode {
        Mode::Run => (vec![config.scheme.compression_ratio], vec![config.base_noise()]),
        Mode::Sweep => {
            let ratios = if config.sweep.compression_ratios.is_empty() {
                vec![config.scheme.compression_ratio]
            } else {
                config.sweep.compression_ratios.clone()
            };
            let noises = if !config.sweep.noise_multipliers.is_empty() {
                config.sweep.noise_multipliers.iter().map(|&s| NoiseSetting::Sigma(s)).collect()
            } else if !config.sweep.target_epsilons.is_empty() {
                config.sweep.target_epsilons.iter().map(|&e| NoiseSetting::TargetEpsilon(e)).collect()
            } else {
                vec![config.base_noise()]
            };
            (ratios, noises)
        }
    };
    let mut runs = Vec::new();
    for &p in &ratios {
        for &noise in &noises {
            for &seed in &seeds {
                runs.push(RunSpec {
                    label: label_for(config, p, noise),
                    compression_ratio: p,
                    noise,
                    seed,
                });
            }
        }
    }
    runs
}

/// Noise multiplier for a run; FedAvg always uses 0.
pub fn resolve_sigma(config: &ExperimentConfig, noise: NoiseSetting) -> Result<f64> {
    if config.scheme.scheme == SchemeName::Fedavg {
        return Ok(0.0);
    }
    match noise {
        NoiseSetting::Sigma(s) => Ok(s),
        NoiseSetting::TargetEpsilon(eps) => {
            let s = &config.scheme;
            let q = s.clients_per_round as f64 / s.n_clients as f64;
            let rounds = s.rounds as u64;
            match s.calibration {
                CalibrationMethod::Accountant => {
                    Ok(calibrate_sigma_accountant(eps, config.delta(), q, rounds, DEFAULT_SIGMA_BRACKET)?)
                }
                CalibrationMethod::Theorem1 => Ok(calibrate_sigma_theorem1(eps, config.delta(), q, rounds)?),
            }
        }
    }
}

pub fn make_partition(config: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<Partition> {
    let n = config.scheme.n_clients;
    Ok(match config.partition {
        PartitionConfig::Iid { public_fraction } => partition_iid(train, n, public_fraction, seed)?,
        PartitionConfig::LabelShards {
            shards_per_client,
            public_fraction,
        } => partition_label_shards(train, n, shards_per_client, public_fraction, seed)?,
    })
}

/// Executes a single run in memory.
pub fn execute_run(config: &ExperimentConfig, data: &ExperimentData, spec: &RunSpec) -> Result<RunSummary> {
    let sigma = resolve_sigma(config, spec.noise)?;
    let model = config.model_spec(data.train.input_dim, data.train.num_classes);
    let scheme = config.scheme_config(spec.compression_ratio, sigma);
    let partition = make_partition(config, &data.train, spec.seed)?;
    let d = model.num_params();
    let k = scheme.k(d);
    let n = scheme.n_clients;
    let rounds = scheme.rounds;
    let mut fed = Federation::new(model, scheme, &data.train, &partition, &data.test, spec.seed)?;
    let mut records = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let start = Instant::now();
        let mut rec = fed.run_round()?;
        if config.record_timing {
            rec.wall_ms = start.elapsed().as_millis() as u64;
        }
        records.push(rec);
    }
    let last = records.last().copied().expect("at least one round");
    let scheme_kind = fed.config().scheme;
    Ok(RunSummary {
        label: spec.label.clone(),
        compression_ratio: if scheme_kind == Scheme::FedSmp { spec.compression_ratio } else { 1.0 },
        k,
        d,
        sigma,
        seed: spec.seed,
        best_accuracy: records.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max),
        final_accuracy: last.accuracy,
        final_epsilon: last.epsilon,
        total_uplink_bits: last.uplink_bits,
        bits_per_client: last.uplink_bits as f64 / n as f64,
        records,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize_points(runs: &[RunSummary]) -> Vec<PointSummary> {
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&RunSummary> = runs.iter().filter(|r| r.label == label).collect();
            let best: Vec<f64> = group.iter().map(|r| r.best_accuracy).collect();
            let (mean, std) = mean_std(&best);
            PointSummary {
                label: label.to_string(),
                compression_ratio: group[0].compression_ratio,
                sigma: group[0].sigma,
                n_seeds: group.len(),
                mean_best_accuracy: mean,
                std_best_accuracy: std,
                final_epsilon: group[0].final_epsilon,
                bits_per_client: group[0].bits_per_client,
            }
        })
        .collect()
}

/// Runs every planned run (in parallel) and summarises, without touching disk.
pub fn compute_experiment(config: &ExperimentConfig, mode: Mode) -> Result<ExperimentOutput> {
    let data = load_data(config)?;
    let specs = plan_runs(config, mode);
    let runs = specs
        .par_iter()
        .map(|spec| execute_run(config, &data, spec))
        .collect::<Result<Vec<_>>>()?;
    let points = summarize_points(&runs);
    Ok(ExperimentOutput { runs, points })
}

/// Computes and writes the metrics files; returns the in-memory results.
pub fn run_experiment(config: &ExperimentConfig, mode: Mode) -> Result<ExperimentOutput> {
    let output = compute_experiment(config, mode)?;
    write_outputs(&config.output_dir, &output)?;
    Ok(output)
}

pub fn write_round_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROUND_HEADER)?;
    for r in records {
        w.write_record([
            (r.round + 1).to_string(),
            fmt_f(r.loss),
            fmt_f(r.accuracy),
            fmt_f(r.epsilon),
            r.uplink_bits.to_string(),
            fmt_f(r.clip_fraction),
            r.saturation.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    let runs_dir = dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| HarnessError::io(&runs_dir, e))?;
    for run in &output.runs {
        write_round_csv(&runs_dir.join(format!("{}_seed{}.csv", run.label, run.seed)), &run.records)?;
    }
    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record([
        "label",
        "p",
        "k",
        "d",
        "sigma",
        "seed",
        "best_acc",
        "final_acc",
        "final_eps",
        "total_bits",
        "bits_per_client",
        "cost_mb_per_client",
    ])?;
    for r in &output.runs {
        w.write_record([
            r.label.clone(),
            fmt_f(r.compression_ratio),
            r.k.to_string(),
            r.d.to_string(),
            fmt_f(r.sigma),
            r.seed.to_string(),
            fmt_f(r.best_accuracy),
            fmt_f(r.final_accuracy),
            fmt_f(r.final_epsilon),
            r.total_uplink_bits.to_string(),
            fmt_f(r.bits_per_client),
            fmt_f(r.bits_per_client / 8.0 / 1e6),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(&summary_path, e))?;
    let agg_path = dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&agg_path)?;
    w.write_record([
        "label",
        "p",
        "sigma",
        "n_seeds",
        "mean_best_acc",
        "std_best_acc",
        "final_eps",
        "bits_per_client",
    ])?;
    for p in &output.points {
        w.write_record([
            p.label.clone(),
            fmt_f(p.compression_ratio),
            fmt_f(p.sigma),
            p.n_seeds.to_string(),
            fmt_f(p.mean_best_accuracy),
            fmt_f(p.std_best_accuracy),
            fmt_f(p.final_epsilon),
            fmt_f(p.bits_per_client),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(&agg_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_definition() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }
}
