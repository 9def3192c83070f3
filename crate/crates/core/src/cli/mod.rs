//! Experiment runner, ablation harness, figure-data emitters and the `arl`
//! command line.

mod ablation;
mod config;
mod experiment;
mod losscurve;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use ablation::{default_grid, parse_modes, run_ablation, AblationMode, AblationOutcome, ModeResult};
pub use config::{
    read_json, write_json, AblationSpec, DataConfig, DatasetSpec, ExperimentConfig, GenDataConfig, OutputSpec, SplitSpec, VerifyConfig,
};
pub use experiment::{config_hash, final_accuracy, run_experiment, run_gen_data, run_verify, ExperimentOutcome, RunManifest, VerifyReport};
pub use losscurve::{emit_losscurve, flattening_point, losscurve_csv, write_losscurve, CurvePoint, CURVE_POINTS, FLATTENING_SLOPE};

use crate::error::{ArlError, Result};
use crate::model::MlpParams;

#[derive(Debug, Parser)]
#[command(name = "arl", version, about = "Adaptive robust-loss learning under noisy labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write metrics, checkpoint and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare fixed, opt1, opt2 and adaptive hyperparameters.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "fixed,opt1,opt2,adaptive")]
        modes: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the loss stored in a checkpoint.
    Losscurve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the risk-gap bounds on a finite world and print a JSON report.
    VerifyBounds {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate and split a dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg: ExperimentConfig = read_json(&config)?;
            experiment::resolve_out(&mut cfg, seed, out.as_deref());
            let outcome = run_experiment(&cfg)?;
            println!(
                "{}: test_acc = {:.4}, hyper = {:?}",
                outcome.out_dir.display(),
                outcome.manifest.final_test_acc,
                outcome.manifest.final_hyper
            );
        }
        Command::Ablate { config, modes, seed, out } => {
            let mut cfg: ExperimentConfig = read_json(&config)?;
            experiment::resolve_out(&mut cfg, seed, out.as_deref());
            let modes = parse_modes(&modes)?;
            let split = cfg.data.build()?;
            let outcome = run_ablation(&split, &cfg.train, &modes, cfg.ablation.grid.as_deref())?;
            config::ensure_dir(&cfg.output.dir)?;
            let path = cfg.output.dir.join("ablation.csv");
            fs::write(&path, outcome.to_csv()).map_err(|e| ArlError::io(&path, e))?;
            for r in &outcome.results {
                println!("{}: test_acc = {:.4}, hyper = {:?}", r.mode, r.final_accuracy(), r.final_hyper);
            }
        }
        Command::Losscurve { checkpoint, out } => {
            let (_, meta) = MlpParams::load_checkpoint(&checkpoint)?;
            let hyper = meta
                .hyper
                .ok_or_else(|| ArlError::Usage(format!("{} records no loss hyperparameters", checkpoint.display())))?;
            write_losscurve(&out, &emit_losscurve(&hyper)?)?;
        }
        Command::VerifyBounds { config } => {
            let cfg: VerifyConfig = read_json(&config)?;
            let report = run_verify(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::GenData { config } => {
            let cfg: GenDataConfig = read_json(&config)?;
            let manifest = run_gen_data(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
