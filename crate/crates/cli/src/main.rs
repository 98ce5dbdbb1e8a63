//! `qsurv`: simulate, train, evaluate, predict, sweep and search from the command line.

mod commands;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsurv::error::{Error, ErrorClass};
use qsurv::model::Conditioning;

#[derive(Debug, Parser)]
#[command(name = "qsurv", version, about = "Quadrature-based neural hazard models for survival data")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Gauss-Legendre order K used for cumulative hazards.
    #[arg(long, global = true)]
    pub k_nodes: Option<usize>,
    /// Time-conditioning head: concat, film or lora.
    #[arg(long, global = true)]
    pub conditioning: Option<Conditioning>,
    /// Output directory or file, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Work is split deterministically; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw train/test sets and truth curves from a synthetic generator.
    Simulate {
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 2000)]
        n_test: usize,
    },
    /// Fit a model and write checkpoint, architecture and training log.
    Train {
        /// Training configuration JSON. Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
    },
    /// Score a checkpoint on a test CSV, with censoring estimated on the training CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Architecture descriptor. Defaults to `architecture.json` next to the checkpoint.
        #[arg(long)]
        architecture: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        train: PathBuf,
    },
    /// Per-subject hazard, cumulative hazard and survival on a time grid.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        architecture: Option<PathBuf>,
        /// Covariate CSV whose header names the model features.
        #[arg(long)]
        covariates: PathBuf,
        /// `start:stop:count` or a comma-separated list of times.
        #[arg(long)]
        grid: String,
    },
    /// Integrated curve error against the generator for several node counts.
    SweepNodes {
        #[arg(long)]
        family: String,
        /// Comma-separated node counts.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3, 5, 7, 10])]
        ks: Vec<usize>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 2000)]
        n_test: usize,
    },
    /// Random hyperparameter search.
    Hpo {
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Nodes and weights of the Gauss-Legendre rule of order `--k-nodes`, as JSON.
    DumpRule,
}

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_INTERNAL: u8 = 5;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    pub fn input(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_DATA,
            message: format!("cannot read {}: {e}", path.display()),
        }
    }

    pub fn output(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: format!("cannot write {}: {e}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => EXIT_USAGE,
            ErrorClass::Data => EXIT_DATA,
            ErrorClass::Numeric => EXIT_NUMERIC,
            ErrorClass::Internal => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
