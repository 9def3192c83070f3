use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, gen_blobs, load_csv, split_meta, split_meta_sized, MetaSplit, NoiseSpec, NoisyDataset};
use crate::error::{ArlError, Result};
use crate::losses::HyperParams;
use crate::meta::TrainConfig;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        n: usize,
        num_classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

fn default_dim() -> usize {
    2
}
fn default_spread() -> f64 {
    0.5
}
fn default_meta_size() -> usize {
    30
}
fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_meta_size")]
    pub meta_size: usize,
    /// Absolute test size; overrides `test_fraction` when set.
    #[serde(default)]
    pub test_size: Option<usize>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            meta_size: default_meta_size(),
            test_size: None,
            test_fraction: default_test_fraction(),
            seed: 0,
        }
    }
}

/// Dataset, split and label noise. Noise is injected into the training part only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

impl DataConfig {
    pub fn load_source(&self) -> Result<NoisyDataset> {
        match &self.dataset {
            DatasetSpec::Blobs {
                n,
                num_classes,
                dim,
                spread,
                seed,
            } => gen_blobs(*n, *num_classes, *dim, *spread, *seed),
            DatasetSpec::Csv { path } => load_csv(path),
        }
    }

    pub fn build(&self) -> Result<MetaSplit> {
        let source = self.load_source()?;
        let s = &self.split;
        let mut split = match s.test_size {
            Some(t) => split_meta_sized(&source, s.meta_size, t, s.seed)?,
            None => split_meta(&source, s.meta_size, s.test_fraction, s.seed)?,
        };
        if let Some(noise) = &self.noise {
            split.train = noise.apply(&split.train)?;
        }
        Ok(split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Write `weights.csv` (PolySoft runs only).
    #[serde(default)]
    pub weights: bool,
    /// Write `losscurve.csv` for the final hyperparameters.
    #[serde(default)]
    pub losscurve: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_out_dir(),
            weights: false,
            losscurve: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    /// Candidate hyperparameters for the `fixed` mode; a default grid is used when absent.
    #[serde(default)]
    pub grid: Option<Vec<HyperParams>>,
}

fn default_true() -> bool {
    true
}

/// One experiment, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Learn the loss hyperparameters on the meta set; `false` keeps them fixed.
    #[serde(default = "default_true")]
    pub adaptive: bool,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub ablation: AblationSpec,
}

/// Settings for `arl gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_points() -> usize {
    4
}
fn default_delta() -> f64 {
    0.02
}

/// Settings for `arl verify-bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub loss: HyperParams,
    pub num_classes: usize,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub etas: Vec<f64>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| ArlError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ArlError::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| ArlError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ArlError::io(dir, e))
}

pub(crate) fn write_split(split: &MetaSplit, dir: &Path) -> Result<()> {
    data::write_csv(&split.train, &dir.join("train.csv"))?;
    data::write_csv(&split.meta, &dir.join("meta.csv"))?;
    data::write_csv(&split.test, &dir.join("test.csv"))?;
    let mut labels = String::from("sample_id,label,clean_label\n");
    for i in 0..split.train.len() {
        labels.push_str(&format!("{i},{},{}\n", split.train.labels[i], split.train.clean_labels[i]));
    }
    let path = dir.join("train_labels.csv");
    fs::write(&path, labels).map_err(|e| ArlError::io(&path, e))
}
