//! Datasets: synthetic Gaussian blobs, CSV ingestion, the known/novel and
//! labeled/unlabeled split, held-out partitioning and noisy views.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{norm, Matrix};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("could not place {num_classes} well-separated means in {dim} dimensions; use a larger dim or fewer classes")]
    Generation { num_classes: usize, dim: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidGenerator(String),
    #[error("invalid split: {0}")]
    Split(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Features plus ground truth and the open-world masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    /// Ground-truth class of every instance (used for evaluation).
    pub labels: Vec<usize>,
    /// Whether the label may be used during training.
    pub is_labeled: Vec<bool>,
    /// Whether the instance belongs to a known class.
    pub is_known: Vec<bool>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Self {
        let n = labels.len();
        assert_eq!(features.rows(), n, "one label per feature row");
        Self {
            features,
            labels,
            is_labeled: vec![false; n],
            is_known: vec![false; n],
        }
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

    /// Sorted distinct class ids.
    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn known_classes(&self) -> BTreeSet<usize> {
        self.labels
            .iter()
            .zip(&self.is_known)
            .filter(|(_, &k)| k)
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.is_labeled.iter().filter(|&&l| l).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            is_labeled: indices.iter().map(|&i| self.is_labeled[i]).collect(),
            is_known: indices.iter().map(|&i| self.is_known[i]).collect(),
        }
    }

    /// Checks the mask invariants: labeled implies known, and the known mask
    /// is a function of the class.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.len();
        if self.is_labeled.len() != n || self.is_known.len() != n || self.features.rows() != n {
            return Err(DataError::Split("mask lengths differ from the dataset".into()));
        }
        if let Some(i) = (0..n).find(|&i| self.is_labeled[i] && !self.is_known[i]) {
            return Err(DataError::Split(format!("instance {i} is labeled but not known")));
        }
        let mut known_of: BTreeMap<usize, bool> = BTreeMap::new();
        for (&c, &k) in self.labels.iter().zip(&self.is_known) {
            if *known_of.entry(c).or_insert(k) != k {
                return Err(DataError::Split(format!("class {c} is partly known")));
            }
        }
        Ok(())
    }
}

/// One mini-batch drawn from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub features: Matrix,
    /// Training labels: `Some` only for labeled instances.
    pub labels: Vec<Option<usize>>,
    /// Row index in the originating dataset.
    pub origin: Vec<usize>,
}

impl FeatureBatch {
    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Self {
        Self {
            features: ds.features.select_rows(indices),
            labels: indices
                .iter()
                .map(|&i| ds.is_labeled[i].then_some(ds.labels[i]))
                .collect(),
            origin: indices.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 200,
            dim: 16,
            separation: 6.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

const MEAN_RETRIES: usize = 10_000;

/// Isotropic Gaussian blobs around means placed on a sphere of radius
/// `separation`, pairwise at least `separation` apart. Instances are stored
/// class by class.
pub fn generate_blobs(cfg: &BlobConfig) -> Result<Dataset, DataError> {
    if cfg.num_classes == 0 || cfg.per_class == 0 || cfg.dim == 0 {
        return Err(DataError::InvalidGenerator(
            "num_classes, per_class and dim must be positive".into(),
        ));
    }
    if !(cfg.separation > 0.0 && cfg.spread > 0.0) || !cfg.separation.is_finite() || !cfg.spread.is_finite() {
        return Err(DataError::InvalidGenerator("separation and spread must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    for _ in 0..cfg.num_classes {
        let mut placed = false;
        for _ in 0..MEAN_RETRIES {
            let raw: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&raw);
            if n < 1e-9 {
                continue;
            }
            let cand: Vec<f64> = raw.iter().map(|v| v / n * cfg.separation).collect();
            let far = means.iter().all(|m| {
                let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= cfg.separation
            });
            if far {
                means.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(DataError::Generation {
                num_classes: cfg.num_classes,
                dim: cfg.dim,
            });
        }
    }
    let noise = Normal::new(0.0, cfg.spread).expect("spread validated above");
    let n = cfg.num_classes * cfg.per_class;
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..cfg.per_class {
            data.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Ok(Dataset::new(Matrix::from_vec(n, cfg.dim, data), labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub known_class_fraction: f64,
    /// Fraction of each known class that is labeled. Zero gives a label-free
    /// split in which every class is novel.
    pub label_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            known_class_fraction: 0.5,
            label_fraction: 0.1,
        }
    }
}

/// `ceil(f * n)` that ignores floating-point dust above an integer.
fn frac_ceil(f: f64, n: usize) -> usize {
    ((f * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Marks the lowest `ceil(known_class_fraction * C)` class ids as known and
/// labels a seeded `ceil(label_fraction * count)` instances of each.
pub fn apply_split(dataset: &Dataset, cfg: &SplitConfig, seed: u64) -> Result<Dataset, DataError> {
    if !(cfg.known_class_fraction > 0.0 && cfg.known_class_fraction <= 1.0) {
        return Err(DataError::Split("known_class_fraction must be in (0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&cfg.label_fraction) {
        return Err(DataError::Split("label_fraction must be in [0, 1]".into()));
    }
    let mut out = dataset.clone();
    out.is_known = vec![false; out.len()];
    out.is_labeled = vec![false; out.len()];
    if cfg.label_fraction == 0.0 {
        return Ok(out);
    }
    let classes = dataset.classes();
    let n_known = frac_ceil(cfg.known_class_fraction, classes.len()).max(1);
    let known: BTreeSet<usize> = classes.iter().take(n_known).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &c in &known {
        let mut members: Vec<usize> = (0..out.len()).filter(|&i| out.labels[i] == c).collect();
        let take = frac_ceil(cfg.label_fraction, members.len());
        if take == 0 {
            return Err(DataError::Split(format!("class {c} would have no labeled instances")));
        }
        for &i in &members {
            out.is_known[i] = true;
        }
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            out.is_labeled[i] = true;
        }
    }
    Ok(out)
}

/// Seeded split into `(train, held_out)`, stratified by class and labeled
/// flag so both parts keep the same proportions.
pub fn holdout_split(dataset: &Dataset, held_out_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut strata: BTreeMap<(usize, bool), Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.len() {
        strata
            .entry((dataset.labels[i], dataset.is_labeled[i]))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        let n_test = (held_out_fraction * members.len() as f64).round() as usize;
        let n_test = n_test.min(members.len().saturating_sub(1));
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (dataset.subset(&train), dataset.subset(&test))
}

/// Adds seeded isotropic Gaussian noise to every feature.
pub fn make_views(features: &Matrix, noise_std: f64, seed: u64) -> Matrix {
    let mut out = features.clone();
    if noise_std == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).expect("noise_std must be non-negative and finite");
    for v in out.as_mut_slice() {
        *v += noise.sample(&mut rng);
    }
    out
}

/// Reads `label,feat_0,...` rows. All instances start unknown and unlabeled.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(file);
    let pstr = path.display().to_string();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Parse {
            path: pstr.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| DataError::Parse {
            path: pstr.clone(),
            line,
            msg,
        };
        if record.len() < 2 {
            return Err(perr("expected a label and at least one feature".into()));
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(perr(format!("expected {w} columns, found {}", record.len())));
            }
            _ => {}
        }
        let label = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| perr(format!("label {:?} is not a non-negative integer", &record[0])))?;
        labels.push(label);
        for cell in record.iter().skip(1) {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| perr(format!("{cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(perr(format!("{cell:?} is not finite")));
            }
            data.push(v);
        }
    }
    let Some(width) = width else {
        return Err(DataError::Parse {
            path: pstr,
            line: if has_header { 2 } else { 1 },
            msg: "no data rows".into(),
        });
    };
    let n = labels.len();
    Ok(Dataset::new(Matrix::from_vec(n, width - 1, data), labels))
}

/// Writes `label,feat_0,...` rows. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_csv(dataset: &Dataset, path: &Path, header: bool) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut body = String::new();
    if header {
        body.push_str("label");
        for j in 0..dataset.dim() {
            body.push_str(&format!(",feat_{j}"));
        }
        body.push('\n');
    }
    for (row, label) in dataset.features.iter_rows().zip(&dataset.labels) {
        body.push_str(&label.to_string());
        for v in row {
            body.push(',');
            body.push_str(&format!("{v:?}"));
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Reads an `index,is_known,is_labeled` sidecar onto `dataset`.
pub fn load_masks(dataset: &Dataset, path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let pstr = path.display().to_string();
    let mut out = dataset.clone();
    out.is_known = vec![false; out.len()];
    out.is_labeled = vec![false; out.len()];
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("index")) {
            continue;
        }
        let perr = |msg: String| DataError::Parse {
            path: pstr.clone(),
            line: line_no,
            msg,
        };
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(perr(format!("expected 3 columns, found {}", cells.len())));
        }
        let i: usize = cells[0].parse().map_err(|_| perr("bad index".into()))?;
        if i >= out.len() {
            return Err(perr(format!("index {i} beyond {} instances", out.len())));
        }
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(perr(format!("{other:?} is not 0 or 1"))),
        };
        out.is_known[i] = flag(cells[1])?;
        out.is_labeled[i] = flag(cells[2])?;
    }
    out.validate()?;
    Ok(out)
}

pub fn write_masks(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut body = String::from("index,is_known,is_labeled\n");
    for i in 0..dataset.len() {
        body.push_str(&format!(
            "{i},{},{}\n",
            dataset.is_known[i] as u8, dataset.is_labeled[i] as u8
        ));
    }
    std::fs::write(path, body).map_err(io_err(path))
}
