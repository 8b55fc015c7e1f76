//! Command-line interface.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use fedsmp_core::privacy::{calibrate_sigma_accountant, calibrate_sigma_theorem1, epsilon, DEFAULT_SIGMA_BRACKET};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, Mode};

#[derive(Debug, Parser)]
#[command(name = "fedsmp", version, about = "Differentially private federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the base configuration once per seed.
    Run { config: PathBuf },
    /// Run the cartesian product of the sweep lists.
    Sweep { config: PathBuf },
    /// Report the accountant epsilon of the subsampled Gaussian mechanism.
    Account {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        rounds: u64,
        #[arg(long)]
        delta: f64,
    },
    /// Noise multiplier for a target epsilon, closed form and accountant.
    Calibrate {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        rounds: u64,
    },
}

fn write_out(out: &mut dyn Write, text: String) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| HarnessError::io(std::path::Path::new("<stdout>"), e))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run { config } => run(config, Mode::Run, out),
        Command::Sweep { config } => run(config, Mode::Sweep, out),
        Command::Account { sigma, q, rounds, delta } => {
            let (eps, alpha) = epsilon(sigma, q, rounds, delta)?;
            write_out(out, format!("epsilon = {eps}"))?;
            write_out(out, format!("alpha = {alpha}"))
        }
        Command::Calibrate { eps, delta, q, rounds } => {
            let closed = calibrate_sigma_theorem1(eps, delta, q, rounds)?;
            write_out(out, format!("sigma_theorem1 = {closed}"))?;
            match calibrate_sigma_accountant(eps, delta, q, rounds, DEFAULT_SIGMA_BRACKET) {
                Ok(s) => write_out(out, format!("sigma_accountant = {s}")),
                Err(e) => write_out(out, format!("sigma_accountant = unavailable ({e})")),
            }
        }
    }
}

fn run(path: PathBuf, mode: Mode, out: &mut dyn Write) -> Result<()> {
    let config = ExperimentConfig::load(&path)?;
    let output = run_experiment(&config, mode)?;
    for p in &output.points {
        write_out(
            out,
            format!(
                "{}: best_acc = {:.4} ± {:.4} over {} seed(s), eps = {}, bits/client = {}",
                p.label, p.mean_best_accuracy, p.std_best_accuracy, p.n_seeds, p.final_epsilon, p.bits_per_client
            ),
        )?;
    }
    write_out(out, format!("metrics written to {}", config.output_dir.display()))
}
