use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ensure_dir, write_json, write_split, ExperimentConfig, GenDataConfig, VerifyConfig};
use super::losscurve::{emit_losscurve, write_losscurve};
use crate::data::DatasetManifest;
use crate::error::Result;
use crate::losses::HyperParams;
use crate::meta::{self, compute_sample_weights, write_metrics_csv, write_weights_csv, MetricsRow, TrainOutcome};
use crate::theory::{bound_constants, bounded_loss_check, riskgap_verify, BoundConstants, BoundedLossReport, FiniteWorld, RiskReport};

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub data: DatasetManifest,
    pub final_hyper: HyperParams,
    pub final_test_acc: f64,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub train: TrainOutcome,
    pub manifest: RunManifest,
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Builds the data, trains, and writes `metrics.csv`, `model.bin`, `model.json`
/// and `manifest.json` (plus `weights.csv` / `losscurve.csv` when requested)
/// into `config.output.dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let split = config.data.build()?;
    let train = if config.adaptive {
        meta::arl_train(&split.train, &split.meta, &split.test, &config.train)?
    } else {
        meta::train_fixed(&split.train, &split.meta, &split.test, &config.train)?
    };

    let dir = &config.output.dir;
    ensure_dir(dir)?;
    let hyper = train.state.hyper;
    write_metrics_csv(&dir.join("metrics.csv"), &train.metrics, hyper.names())?;
    train.state.params.save_checkpoint(&dir.join("model.bin"), Some(hyper))?;
    let mut artifacts = vec!["metrics.csv".to_string(), "model.bin".into(), "model.json".into()];
    if config.output.weights {
        if let HyperParams::PolySoft { .. } = hyper {
            let w = compute_sample_weights(&train.state.params, &hyper, &split.train)?;
            write_weights_csv(&dir.join("weights.csv"), &split.train, &w)?;
            artifacts.push("weights.csv".into());
        } else {
            log::warn!("weights.csv is only written for poly_soft runs");
        }
    }
    if config.output.losscurve {
        write_losscurve(&dir.join("losscurve.csv"), &emit_losscurve(&hyper)?)?;
        artifacts.push("losscurve.csv".into());
    }
    artifacts.push("manifest.json".into());

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_hash(config)?,
        seed: config.train.seed,
        config: config.clone(),
        data: DatasetManifest::from_split(&split),
        final_hyper: hyper,
        final_test_acc: final_accuracy(&train.metrics),
        artifacts,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentOutcome {
        out_dir: dir.clone(),
        train,
        manifest,
    })
}

pub fn final_accuracy(rows: &[MetricsRow]) -> f64 {
    rows.last().map_or(f64::NAN, |r| r.test_acc)
}

/// Writes `train.csv`, `meta.csv`, `test.csv`, `train_labels.csv` and
/// `manifest.json` into `config.output.dir`.
pub fn run_gen_data(config: &GenDataConfig) -> Result<DatasetManifest> {
    let split = config.data.build()?;
    let dir = &config.output.dir;
    ensure_dir(dir)?;
    write_split(&split, dir)?;
    let manifest = DatasetManifest::from_split(&split);
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub constants: Vec<Option<BoundConstants>>,
    pub reports: Vec<RiskReport>,
    pub bounded_loss: BoundedLossReport,
    pub passed: bool,
}

pub fn run_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    let mut constants = Vec::new();
    let mut reports = Vec::new();
    for &eta in &config.etas {
        let world = FiniteWorld::balanced(config.points, config.num_classes, config.delta, eta)?;
        let report = riskgap_verify(&world, &config.loss)?;
        constants.push(bound_constants(config.num_classes, eta, &config.loss).ok());
        reports.push(report);
    }
    let bounded_loss = bounded_loss_check(config.num_classes, config.delta, &config.loss)?;
    let passed = reports.iter().all(RiskReport::passed) && bounded_loss.range.is_finite();
    Ok(VerifyReport {
        constants,
        reports,
        bounded_loss,
        passed,
    })
}

pub fn resolve_out(config: &mut ExperimentConfig, seed: Option<u64>, out: Option<&Path>) {
    if let Some(s) = seed {
        config.train.seed = s;
    }
    if let Some(o) = out {
        config.output.dir = o.to_path_buf();
    }
}
