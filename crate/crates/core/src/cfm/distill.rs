//! Batch-wise synthetic data optimization.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cfm::grad::{empty_state, SyntheticObjective};
use crate::cfm::loss::LossSettings;
use crate::cfm::optim::{Optimizer, OptimizerConfig};
use crate::cfm::schedule::{default_floor, CurriculumSchedule, ScheduleKind};
use crate::error::{Result, UniddError};
use crate::harness::dataset::{Dataset, Split};
use crate::harness::squeeze::{hex, SqueezeArtifact};
use crate::linalg::Mat;
use crate::rng;

/// What the schedule's step counter advances over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumAxis {
    /// One `β` per synthetic batch: `t = batch index`, `T = number of batches`.
    #[default]
    PerBatch,
    /// `β` changes within each batch: `t = iteration`, `T = iterations`.
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfmConfig {
    pub ipc: usize,
    pub batch_size: usize,
    pub iterations: usize,
    /// Starting (largest) ridge parameter of the curriculum.
    pub beta: f64,
    /// Lower clamp for `β_t`; derived from the real covariances when absent.
    pub beta_floor: Option<f64>,
    pub schedule: ScheduleKind,
    pub curriculum_axis: CurriculumAxis,
    pub optimizer: OptimizerConfig,
    pub loss: LossSettings,
}

impl Default for CfmConfig {
    fn default() -> Self {
        CfmConfig {
            ipc: 10,
            batch_size: 10,
            iterations: 200,
            beta: 1.0,
            beta_floor: None,
            schedule: ScheduleKind::Cosine,
            curriculum_axis: CurriculumAxis::PerBatch,
            optimizer: OptimizerConfig::default(),
            loss: LossSettings::default(),
        }
    }
}

impl CfmConfig {
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub squeeze_hash: String,
    /// `β` used by each batch (per-batch axis) or by its first iteration.
    pub batch_betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: Dataset,
    pub provenance: Provenance,
}

impl SyntheticDataset {
    pub fn provenance_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".meta.json");
        PathBuf::from(name)
    }

    /// Writes the dataset file and a `<path>.meta.json` provenance sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.data.save(path)?;
        let meta = serde_json::to_string_pretty(&self.provenance).expect("provenance serializes");
        fs::write(Self::provenance_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = crate::harness::dataset::load_dataset(path)?;
        let meta = fs::read_to_string(Self::provenance_path(path))?;
        let provenance =
            serde_json::from_str(&meta).map_err(|e| UniddError::Format(format!("provenance sidecar: {e}")))?;
        Ok(SyntheticDataset { data, provenance })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// Global iteration counter across batches.
    pub t: usize,
    pub batch: usize,
    pub beta: f64,
    pub l_cls: f64,
    pub l_filter: f64,
    pub l_signal: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub eta: f64,
    pub records: Vec<LossRecord>,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,l_cls,l_filter,l_signal,l_total\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.t, r.beta, r.l_cls, r.l_filter, r.l_signal, r.l_total
            ));
        }
        out
    }

    /// Largest `|L_total − (L_cls + ηL_filter + ηL_signal)|` over all records.
    pub fn max_reconstruction_error(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (r.l_total - (r.l_cls + self.eta * r.l_filter + self.eta * r.l_signal)).abs())
            .fold(0.0, f64::max)
    }

    /// Mean over batches of the first and last recorded total loss.
    pub fn initial_and_final(&self) -> Option<(f64, f64)> {
        let batches = self.records.iter().map(|r| r.batch).max()? + 1;
        let mut first = vec![None; batches];
        let mut last = vec![0.0; batches];
        for r in &self.records {
            first[r.batch].get_or_insert(r.l_total);
            last[r.batch] = r.l_total;
        }
        let n = batches as f64;
        Some((first.iter().map(|v| v.unwrap_or(0.0)).sum::<f64>() / n, last.iter().sum::<f64>() / n))
    }
}

/// Class label of every synthetic row: `ipc` rounds over all classes.
pub fn synthetic_labels(ipc: usize, classes: usize) -> Vec<usize> {
    (0..ipc).flat_map(|_| 0..classes).collect()
}

fn validate(real: &Dataset, squeeze: &SqueezeArtifact, cfg: &CfmConfig) -> Result<()> {
    let c = real.classes();
    let m = cfg.ipc * c;
    if cfg.ipc == 0 {
        return Err(UniddError::InvalidConfig("ipc must be positive".into()));
    }
    if cfg.batch_size < 2 || m % cfg.batch_size != 0 {
        return Err(UniddError::InvalidConfig(format!(
            "{m} synthetic samples cannot be split into batches of {}",
            cfg.batch_size
        )));
    }
    if !(cfg.loss.eta >= 0.0) {
        return Err(UniddError::InvalidConfig("eta must be non-negative".into()));
    }
    if real.input_dim() != squeeze.net.input_width() || c != squeeze.head.weights.ncols() {
        return Err(UniddError::InvalidConfig(format!(
            "dataset ({} inputs, {c} classes) does not match the squeeze net ({} inputs, {} classes)",
            real.input_dim(),
            squeeze.net.input_width(),
            squeeze.head.weights.ncols()
        )));
    }
    if let Some(class) = real.meta.class_counts.iter().position(|&n| n < cfg.ipc) {
        return Err(UniddError::InvalidConfig(format!(
            "class {class} has fewer than {} real samples",
            cfg.ipc
        )));
    }
    Ok(())
}

/// `1e-6·max(1, tr(Ψ)/d)` over the real layers, or the configured floor.
pub fn beta_floor(squeeze: &SqueezeArtifact, cfg: &CfmConfig) -> f64 {
    cfg.beta_floor.unwrap_or_else(|| {
        let ratio = squeeze
            .real_stats
            .iter()
            .map(|s| s.psi.as_mat().trace() / s.dim().max(1) as f64)
            .fold(0.0, f64::max);
        default_floor(ratio)
    })
}

/// Samples the initial synthetic inputs: `ipc` distinct real rows per class,
/// laid out in the order of [`synthetic_labels`].
pub fn initial_synthetic(real: &Dataset, ipc: usize, seed: u64) -> Mat {
    let mut init_rng = rng::stream(seed, "init-sampling");
    let class_rows = real.class_rows();
    let picks: Vec<Vec<usize>> = class_rows
        .iter()
        .map(|rows| {
            sample(&mut init_rng, rows.len(), ipc)
                .into_iter()
                .map(|k| rows[k])
                .collect()
        })
        .collect();
    let labels = synthetic_labels(ipc, real.classes());
    Mat::from_fn(labels.len(), real.input_dim(), |i, j| {
        let round = i / real.classes();
        real.h[(picks[labels[i]][round], j)]
    })
}

/// Runs the curriculum frequency matching loop.
pub fn distill(
    real: &Dataset,
    squeeze: &SqueezeArtifact,
    cfg: &CfmConfig,
    seed: u64,
) -> Result<(SyntheticDataset, LossReport)> {
    validate(real, squeeze, cfg)?;
    let c = real.classes();
    let labels = synthetic_labels(cfg.ipc, c);
    let m = labels.len();
    let batches = m / cfg.batch_size;
    let mut hs = initial_synthetic(real, cfg.ipc, seed);
    let ys_all = crate::features::one_hot(&labels, c);

    let floor = beta_floor(squeeze, cfg);
    let schedule_len = match cfg.curriculum_axis {
        CurriculumAxis::PerBatch => batches,
        CurriculumAxis::PerIteration => cfg.iterations.max(1),
    };
    let schedule = CurriculumSchedule::new(cfg.schedule, cfg.beta, schedule_len, floor)?;

    let mut report = LossReport {
        eta: cfg.loss.eta,
        records: Vec::with_capacity(batches * cfg.iterations),
    };
    let mut batch_betas = Vec::with_capacity(batches);
    let mut t_global = 0;
    for b in 0..batches {
        let rows = b * cfg.batch_size..(b + 1) * cfg.batch_size;
        let mut hb = hs.rows(rows.start, cfg.batch_size).into_owned();
        let yb = ys_all.rows(rows.start, cfg.batch_size).into_owned();
        let batch_beta = match cfg.curriculum_axis {
            CurriculumAxis::PerBatch => schedule.beta_at(b)?,
            CurriculumAxis::PerIteration => schedule.beta_at(0)?,
        };
        batch_betas.push(batch_beta);

        let mut state = empty_state(&squeeze.net, c);
        let mut optimizer = Optimizer::new(cfg.optimizer, hb.nrows(), hb.ncols());
        for i in 0..cfg.iterations {
            let beta = match cfg.curriculum_axis {
                CurriculumAxis::PerBatch => batch_beta,
                CurriculumAxis::PerIteration => schedule.beta_at(i)?,
            };
            let objective = SyntheticObjective {
                net: &squeeze.net,
                head: &squeeze.head,
                real: &squeeze.real_stats,
                beta,
                settings: cfg.loss,
            };
            let eval = objective.evaluate(&hb, &yb, &state, true)?;
            report.records.push(LossRecord {
                t: t_global,
                batch: b,
                beta,
                l_cls: eval.l_cls,
                l_filter: eval.l_filter,
                l_signal: eval.l_signal,
                l_total: eval.l_total,
            });
            t_global += 1;
            state = eval.emu;
            optimizer.step(&mut hb, &eval.grad);
        }
        hs.rows_mut(rows.start, cfg.batch_size).copy_from(&hb);
    }

    let data = Dataset::from_labels(hs, &labels, c, Split::Synthetic, "synthetic", Some(seed))?;
    let synthetic = SyntheticDataset {
        data,
        provenance: Provenance {
            seed,
            config_hash: cfg.hash(),
            squeeze_hash: squeeze.config_hash.clone(),
            batch_betas,
        },
    };
    Ok((synthetic, report))
}
