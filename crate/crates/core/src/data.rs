//! Synthetic datasets, label-noise injection, meta/train/test splitting and CSV I/O.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};
use crate::model::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    Hierarchical,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub noise: Option<NoiseKind>,
    pub noise_rate: f64,
    pub noise_seed: Option<u64>,
}

/// Features with observed (possibly corrupted) labels and the hidden clean labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub clean_labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
    /// Original label ids for CSV-loaded data (`label_map[k]` is class `k`).
    pub label_map: Option<Vec<i64>>,
}

impl NoisyDataset {
    pub fn new_clean(features: Matrix, labels: Vec<usize>, num_classes: usize, provenance: Provenance) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(ArlError::Shape(format!("{} feature rows but {} labels", features.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(ArlError::InvalidInput(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(NoisyDataset {
            features,
            clean_labels: labels.clone(),
            labels,
            num_classes,
            provenance,
            label_map: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_flipped(&self, i: usize) -> bool {
        self.labels[i] != self.clean_labels[i]
    }

    pub fn flipped_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).filter(|&i| self.is_flipped(i)).count() as f64 / self.len() as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> NoisyDataset {
        NoisyDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            clean_labels: indices.iter().map(|&i| self.clean_labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
            label_map: self.label_map.clone(),
        }
    }

    /// Copy whose observed labels are reset to the clean ones.
    pub fn cleaned(&self) -> NoisyDataset {
        let mut out = self.clone();
        out.labels = out.clean_labels.clone();
        out.provenance.noise = None;
        out.provenance.noise_rate = 0.0;
        out.provenance.noise_seed = None;
        out
    }
}

/// `c` isotropic Gaussian clusters of standard deviation `spread` around unit-norm
/// centers: evenly spaced on a circle when `dim == 2`, random orthonormal
/// directions when `dim > 2` (random unit directions beyond `dim` classes).
/// Class sizes differ by at most one; sample `i` has class `i mod c`.
pub fn gen_blobs(n: usize, num_classes: usize, dim: usize, spread: f64, seed: u64) -> Result<NoisyDataset> {
    if num_classes < 2 || n < num_classes || dim == 0 {
        return Err(ArlError::Config(format!("blobs need n >= c >= 2 and dim >= 1 (n = {n}, c = {num_classes}, dim = {dim})")));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(ArlError::Config(format!("spread must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = blob_centers(num_classes, dim, &mut rng);
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % num_classes;
        for &c in &centers[y] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(c + spread * noise);
        }
        labels.push(y);
    }
    NoisyDataset::new_clean(
        Matrix::new(n, dim, data)?,
        labels,
        num_classes,
        Provenance {
            generator: format!("blobs(n={n},c={num_classes},dim={dim},spread={spread})"),
            seed,
            noise: None,
            noise_rate: 0.0,
            noise_seed: None,
        },
    )
}

fn blob_centers(c: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    match dim {
        1 => (0..c).map(|k| vec![-1.0 + 2.0 * k as f64 / (c - 1) as f64]).collect(),
        2 => (0..c)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
                vec![angle.cos(), angle.sin()]
            })
            .collect(),
        _ => {
            let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
            while centers.len() < c {
                let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                if centers.len() < dim {
                    for u in &centers {
                        let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                        for (a, b) in v.iter_mut().zip(u) {
                            *a -= proj * b;
                        }
                    }
                }
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm < 1e-8 {
                    continue;
                }
                centers.push(v.into_iter().map(|a| a / norm).collect());
            }
            centers
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(ArlError::Domain(format!("noise rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// Which samples get flipped: independently with probability `rate`, or an exact
/// `floor(rate * n)` of them chosen uniformly.
fn flip_mask(n: usize, rate: f64, exact_count: bool, rng: &mut ChaCha8Rng) -> Vec<bool> {
    if exact_count {
        let k = (rate * n as f64).floor() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut mask = vec![false; n];
        for &i in &idx[..k] {
            mask[i] = true;
        }
        mask
    } else {
        (0..n).map(|_| rng.random::<f64>() < rate).collect()
    }
}

fn inject_with(
    dataset: &NoisyDataset,
    rate: f64,
    seed: u64,
    exact_count: bool,
    kind: NoiseKind,
    mut target: impl FnMut(usize, &mut ChaCha8Rng) -> usize,
) -> NoisyDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = flip_mask(dataset.len(), rate, exact_count, &mut rng);
    let mut out = dataset.clone();
    for (i, flip) in mask.into_iter().enumerate() {
        let y = dataset.clean_labels[i];
        out.labels[i] = if flip { target(y, &mut rng) } else { y };
    }
    out.provenance.noise = Some(kind);
    out.provenance.noise_rate = rate;
    out.provenance.noise_seed = Some(seed);
    out
}

/// Flip each sample with probability `rate` to a uniformly chosen other class.
pub fn inject_symmetric(dataset: &NoisyDataset, rate: f64, seed: u64) -> Result<NoisyDataset> {
    inject_symmetric_with(dataset, rate, seed, false)
}

pub fn inject_symmetric_with(dataset: &NoisyDataset, rate: f64, seed: u64, exact_count: bool) -> Result<NoisyDataset> {
    check_rate(rate)?;
    let c = dataset.num_classes;
    Ok(inject_with(dataset, rate, seed, exact_count, NoiseKind::Symmetric, |y, rng| {
        let k = rng.random_range(0..c - 1);
        if k >= y {
            k + 1
        } else {
            k
        }
    }))
}

/// Flip each sample with probability `rate` to class `y+1` or `y+2 (mod c)`, half each.
pub fn inject_asymmetric(dataset: &NoisyDataset, rate: f64, seed: u64) -> Result<NoisyDataset> {
    inject_asymmetric_with(dataset, rate, seed, false)
}

pub fn inject_asymmetric_with(dataset: &NoisyDataset, rate: f64, seed: u64, exact_count: bool) -> Result<NoisyDataset> {
    check_rate(rate)?;
    let c = dataset.num_classes;
    if c < 3 {
        return Err(ArlError::Config(format!("asymmetric noise needs at least 3 classes, got {c}")));
    }
    Ok(inject_with(dataset, rate, seed, exact_count, NoiseKind::Asymmetric, |y, rng| {
        (y + 1 + rng.random_range(0..2)) % c
    }))
}

/// Flip each sample with probability `rate` uniformly within its superclass block.
pub fn inject_hierarchical(dataset: &NoisyDataset, rate: f64, superclasses: &[Vec<usize>], seed: u64) -> Result<NoisyDataset> {
    inject_hierarchical_with(dataset, rate, superclasses, seed, false)
}

pub fn inject_hierarchical_with(
    dataset: &NoisyDataset,
    rate: f64,
    superclasses: &[Vec<usize>],
    seed: u64,
    exact_count: bool,
) -> Result<NoisyDataset> {
    check_rate(rate)?;
    let c = dataset.num_classes;
    let mut block_of = vec![usize::MAX; c];
    for (b, block) in superclasses.iter().enumerate() {
        for &k in block {
            if k >= c {
                return Err(ArlError::Config(format!("superclass {b} names class {k}, only {c} classes exist")));
            }
            if block_of[k] != usize::MAX {
                return Err(ArlError::Config(format!("class {k} appears in more than one superclass")));
            }
            block_of[k] = b;
        }
        if block.len() < 2 && rate > 0.0 {
            return Err(ArlError::Config(format!("superclass {b} = {block:?} is a singleton; nothing to flip to")));
        }
    }
    if let Some(k) = block_of.iter().position(|&b| b == usize::MAX) {
        return Err(ArlError::Config(format!("class {k} is not covered by any superclass")));
    }
    Ok(inject_with(dataset, rate, seed, exact_count, NoiseKind::Hierarchical, |y, rng| {
        let block = &superclasses[block_of[y]];
        let others: Vec<usize> = block.iter().copied().filter(|&k| k != y).collect();
        others[rng.random_range(0..others.len())]
    }))
}

/// Declarative noise settings, as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exact_count: bool,
    #[serde(default)]
    pub superclasses: Option<Vec<Vec<usize>>>,
}

impl NoiseSpec {
    pub fn apply(&self, dataset: &NoisyDataset) -> Result<NoisyDataset> {
        match self.kind {
            NoiseKind::Symmetric => inject_symmetric_with(dataset, self.rate, self.seed, self.exact_count),
            NoiseKind::Asymmetric => inject_asymmetric_with(dataset, self.rate, self.seed, self.exact_count),
            NoiseKind::Hierarchical => {
                let blocks = self
                    .superclasses
                    .as_ref()
                    .ok_or_else(|| ArlError::Config("hierarchical noise needs 'superclasses'".into()))?;
                inject_hierarchical_with(dataset, self.rate, blocks, self.seed, self.exact_count)
            }
        }
    }
}

/// Training data (may be noisy), a small clean meta set and a clean test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaSplit {
    pub train: NoisyDataset,
    pub meta: NoisyDataset,
    pub test: NoisyDataset,
}

/// Disjoint random split. The test part has `round(test_fraction * n)` samples;
/// the meta part is stratified per class when `meta_size` divides evenly.
pub fn split_meta(dataset: &NoisyDataset, meta_size: usize, test_fraction: f64, seed: u64) -> Result<MetaSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(ArlError::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let test_size = (test_fraction * dataset.len() as f64).round() as usize;
    split_meta_sized(dataset, meta_size, test_size, seed)
}

/// [`split_meta`] with an absolute test size.
pub fn split_meta_sized(dataset: &NoisyDataset, meta_size: usize, test_size: usize, seed: u64) -> Result<MetaSplit> {
    let n = dataset.len();
    if meta_size == 0 || meta_size + test_size >= n {
        return Err(ArlError::Config(format!(
            "cannot split {n} samples into meta = {meta_size}, test = {test_size} and a non-empty train part"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let test_idx: Vec<usize> = order[..test_size].to_vec();
    let rest = &order[test_size..];

    let c = dataset.num_classes;
    let mut meta_idx = Vec::with_capacity(meta_size);
    let mut taken = vec![false; n];
    if meta_size.is_multiple_of(c) {
        let per_class = meta_size / c;
        let mut counts = vec![0; c];
        for &i in rest {
            let y = dataset.clean_labels[i];
            if counts[y] < per_class {
                counts[y] += 1;
                meta_idx.push(i);
                taken[i] = true;
            }
        }
        if let Some(k) = counts.iter().position(|&m| m < per_class) {
            return Err(ArlError::Config(format!("class {k} has fewer than {per_class} samples left for the meta set")));
        }
    } else {
        for &i in &rest[..meta_size] {
            meta_idx.push(i);
            taken[i] = true;
        }
    }
    let train_idx: Vec<usize> = rest.iter().copied().filter(|&i| !taken[i]).collect();
    Ok(MetaSplit {
        train: dataset.subset(&train_idx),
        meta: dataset.subset(&meta_idx).cleaned(),
        test: dataset.subset(&test_idx).cleaned(),
    })
}

/// Reads `feature_1,...,feature_d,label` rows. A first row that does not parse as
/// numbers is treated as a header. Labels are integers, remapped to `0..c` in
/// ascending order of their original ids.
pub fn load_csv(path: &Path) -> Result<NoisyDataset> {
    let text = fs::read_to_string(path).map_err(|e| ArlError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<(Vec<f64>, i64)> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| ArlError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() < 2 {
            return Err(ArlError::Schema(format!("line {line}: need at least one feature and a label")));
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().take(record.len() - 1).map(str::parse::<f64>).collect();
        let label = record[record.len() - 1].parse::<i64>();
        let (features, label) = match (parsed, label) {
            (Ok(f), Ok(l)) => (f, l),
            _ if rows.is_empty() && width.is_none() => {
                // header
                width = Some(record.len());
                continue;
            }
            (Err(e), _) => {
                return Err(ArlError::Parse {
                    line,
                    message: format!("bad feature value: {e}"),
                })
            }
            (_, Err(e)) => {
                return Err(ArlError::Parse {
                    line,
                    message: format!("bad label '{}': {e}", &record[record.len() - 1]),
                })
            }
        };
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ArlError::Parse {
                line,
                message: "non-finite feature".into(),
            });
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(ArlError::Schema(format!("line {line} has {} columns, expected {w}", record.len())));
            }
            None => width = Some(record.len()),
            _ => {}
        }
        rows.push((features, label));
    }
    if rows.is_empty() {
        return Err(ArlError::Schema(format!("{} contains no data rows", path.display())));
    }

    let ids: BTreeMap<i64, usize> = {
        let mut unique: Vec<i64> = rows.iter().map(|r| r.1).collect();
        unique.sort_unstable();
        unique.dedup();
        unique.into_iter().enumerate().map(|(k, id)| (id, k)).collect()
    };
    let dim = rows[0].0.len();
    let labels: Vec<usize> = rows.iter().map(|r| ids[&r.1]).collect();
    let data: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    let mut ds = NoisyDataset::new_clean(
        Matrix::new(labels.len(), dim, data)?,
        labels,
        ids.len(),
        Provenance {
            generator: format!("csv({})", path.display()),
            seed: 0,
            noise: None,
            noise_rate: 0.0,
            noise_seed: None,
        },
    )?;
    ds.label_map = Some(ids.into_keys().collect());
    Ok(ds)
}

/// Writes observed labels (mapped back to original ids when known), no header.
pub fn write_csv(dataset: &NoisyDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..dataset.len() {
        for v in dataset.features.row(i) {
            out.push_str(&format!("{v},"));
        }
        let label = match &dataset.label_map {
            Some(map) => map[dataset.labels[i]],
            None => dataset.labels[i] as i64,
        };
        out.push_str(&format!("{label}\n"));
    }
    fs::write(path, out).map_err(|e| ArlError::io(path, e))
}

/// Summary written beside generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: String,
    pub seed: u64,
    pub num_classes: usize,
    pub dim: usize,
    pub train: usize,
    pub meta: usize,
    pub test: usize,
    pub noise: Option<NoiseKind>,
    pub noise_rate: f64,
    pub noise_seed: Option<u64>,
    pub flipped_fraction: f64,
    pub train_class_counts: Vec<usize>,
}

impl DatasetManifest {
    pub fn from_split(split: &MetaSplit) -> Self {
        let p = &split.train.provenance;
        DatasetManifest {
            generator: p.generator.clone(),
            seed: p.seed,
            num_classes: split.train.num_classes,
            dim: split.train.dim(),
            train: split.train.len(),
            meta: split.meta.len(),
            test: split.test.len(),
            noise: p.noise,
            noise_rate: p.noise_rate,
            noise_seed: p.noise_seed,
            flipped_fraction: split.train.flipped_fraction(),
            train_class_counts: split.train.class_counts(),
        }
    }
}
