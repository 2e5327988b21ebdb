//! Labelled datasets, the Gaussian-mixture generator and the binary dataset file.
//!
//! File layout, little-endian:
//!
//! ```text
//! "UDS1" | u32 version | u32 n | u32 d_in | u32 c | u8 split
//!        | f64 H[n][d_in] (row-major) | u16 label[n] | u32 crc32(all preceding bytes)
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UniddError};
use crate::features::{label_indices, one_hot};
use crate::linalg::Mat;
use crate::rng;

const MAGIC: &[u8; 4] = b"UDS1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Synthetic,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
            Split::Synthetic => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            2 => Ok(Split::Synthetic),
            other => Err(UniddError::Format(format!("unknown split tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: Option<u64>,
    pub class_counts: Vec<usize>,
}

/// Inputs `h` (`n × d_in`) with one-hot labels `y` (`n × c`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub h: Mat,
    pub y: Mat,
    pub split: Split,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn from_labels(h: Mat, labels: &[usize], classes: usize, split: Split, name: &str, seed: Option<u64>) -> Result<Self> {
        if h.nrows() != labels.len() {
            return Err(UniddError::ShapeMismatch(format!(
                "{} input rows for {} labels",
                h.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(UniddError::InvalidConfig(format!("label {bad} out of range for {classes} classes")));
        }
        let mut class_counts = vec![0; classes];
        for &l in labels {
            class_counts[l] += 1;
        }
        Ok(Dataset {
            h,
            y: one_hot(labels, classes),
            split,
            meta: DatasetMeta {
                name: name.to_string(),
                seed,
                class_counts,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn classes(&self) -> usize {
        self.y.ncols()
    }

    pub fn labels(&self) -> Vec<usize> {
        label_indices(&self.y).expect("labels validated on construction")
    }

    /// Row indices of each class, in dataset order.
    pub fn class_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.classes()];
        for (i, l) in self.labels().into_iter().enumerate() {
            rows[l].push(i);
        }
        rows
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d, c) = (self.len(), self.input_dim(), self.classes());
        let mut buf = Vec::with_capacity(HEADER_LEN + n * d * 8 + n * 2 + 4);
        buf.extend_from_slice(MAGIC);
        for v in [VERSION, n as u32, d as u32, c as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(self.split.tag());
        for i in 0..n {
            for j in 0..d {
                buf.extend_from_slice(&self.h[(i, j)].to_le_bytes());
            }
        }
        for l in self.labels() {
            buf.extend_from_slice(&(l as u16).to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], name: &str) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(UniddError::Format("file shorter than the dataset header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(UniddError::Format("bad dataset magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(UniddError::Format(format!("unsupported dataset version {version}")));
        }
        let (n, d, c) = (word(8) as usize, word(12) as usize, word(16) as usize);
        let split = Split::from_tag(bytes[20])?;
        let expected = HEADER_LEN + n * d * 8 + n * 2 + 4;
        if bytes.len() != expected {
            return Err(UniddError::Format(format!(
                "dataset body is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let body_end = expected - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(UniddError::ChecksumMismatch { stored, computed });
        }
        let mut at = HEADER_LEN;
        let mut h = Mat::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                h[(i, j)] = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
                at += 8;
            }
        }
        let labels: Vec<usize> = (0..n)
            .map(|i| u16::from_le_bytes([bytes[at + 2 * i], bytes[at + 2 * i + 1]]) as usize)
            .collect();
        if let Some((row, l)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(UniddError::Format(format!(
                "label row {row} is not one-hot: class {l} of {c}"
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(UniddError::Format("non-finite input value".into()));
        }
        Dataset::from_labels(h, &labels, c, split, name, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_bytes(&bytes, &name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    pub classes: usize,
    pub input_dim: usize,
    /// Samples per class before the 80/20 train/test split.
    pub per_class: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            classes: 10,
            input_dim: 32,
            per_class: 625,
            separation: 6.0,
            seed: 0,
        }
    }
}

/// Isotropic unit-variance Gaussian classes whose means lie on a sphere of
/// radius `separation`. Returns `(train, test)` with 80% of each class in train.
pub fn generate_gaussian_mixture(cfg: &MixtureConfig) -> Result<(Dataset, Dataset)> {
    if cfg.classes < 2 {
        return Err(UniddError::InvalidConfig("mixture needs at least 2 classes".into()));
    }
    if !(cfg.separation >= 0.0 && cfg.separation.is_finite()) {
        return Err(UniddError::InvalidConfig(format!(
            "separation must be non-negative, got {}",
            cfg.separation
        )));
    }
    if cfg.input_dim == 0 || cfg.per_class < 5 {
        return Err(UniddError::InvalidConfig(
            "mixture needs a positive input dimension and at least 5 samples per class".into(),
        ));
    }
    let mut mean_rng = rng::stream(cfg.seed, "mixture-means");
    let mut noise_rng = rng::stream(cfg.seed, "mixture-noise");
    let means: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.input_dim).map(|_| StandardNormal.sample(&mut mean_rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * cfg.separation / norm).collect()
        })
        .collect();

    let train_per_class = cfg.per_class * 4 / 5;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mean) in means.iter().enumerate() {
        for k in 0..cfg.per_class {
            let row: Vec<f64> = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut noise_rng);
                    m + z
                })
                .collect();
            if k < train_per_class {
                train.push((class, row));
            } else {
                test.push((class, row));
            }
        }
    }
    let mut order_rng = rng::stream(cfg.seed, "mixture-order");
    train.shuffle(&mut order_rng);
    test.shuffle(&mut order_rng);
    let build = |rows: Vec<(usize, Vec<f64>)>, split: Split| {
        let labels: Vec<usize> = rows.iter().map(|(l, _)| *l).collect();
        let h = Mat::from_fn(rows.len(), cfg.input_dim, |i, j| rows[i].1[j]);
        Dataset::from_labels(h, &labels, cfg.classes, split, "gaussian_mixture", Some(cfg.seed))
    };
    Ok((build(train, Split::Train)?, build(test, Split::Test)?))
}
