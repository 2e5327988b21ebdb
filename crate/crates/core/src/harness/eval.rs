//! Fresh-head evaluation on frozen features.

use serde::{Deserialize, Serialize};

use crate::cfm::loss::softmax_rows;
use crate::error::{Result, UniddError};
use crate::harness::dataset::Dataset;
use crate::harness::squeeze::{head_features, SqueezeArtifact};
use crate::linalg::Mat;
use crate::objectives::{krr_ridge_solution, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    /// Closed-form ridge regression onto one-hot targets.
    Ridge { beta: f64 },
    /// Full-batch gradient descent on mean softmax cross-entropy from zero weights.
    Softmax { epochs: usize, lr: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub head: HeadKind,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            head: HeadKind::Ridge { beta: 0.1 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub config: EvalConfig,
}

/// Trains a new head on `train`'s final-layer features through the squeeze net
/// and reports accuracy on `test`.
pub fn evaluate(train: &Dataset, squeeze: &SqueezeArtifact, test: &Dataset, cfg: &EvalConfig) -> Result<EvalResult> {
    if train.is_empty() {
        return Err(UniddError::InvalidConfig("cannot evaluate an empty training set".into()));
    }
    if let Some(class) = train.meta.class_counts.iter().position(|&n| n == 0) {
        return Err(UniddError::InvalidConfig(format!("class {class} has no training samples")));
    }
    if train.classes() != test.classes() || train.classes() != squeeze.head.weights.ncols() {
        return Err(UniddError::ShapeMismatch(format!(
            "class counts differ: train {}, test {}, squeeze head {}",
            train.classes(),
            test.classes(),
            squeeze.head.weights.ncols()
        )));
    }
    let features = head_features(&squeeze.net, &train.h)?;
    let head = fit_head(&features, &train.y, &cfg.head)?;
    let test_features = head_features(&squeeze.net, &test.h)?;
    Ok(score(&head, &test_features, test, *cfg))
}

fn fit_head(features: &Mat, y: &Mat, kind: &HeadKind) -> Result<LinearModel> {
    match *kind {
        HeadKind::Ridge { beta } => krr_ridge_solution(features, y, beta),
        HeadKind::Softmax { epochs, lr } => {
            let n = features.nrows() as f64;
            let mut w = Mat::zeros(features.ncols(), y.ncols());
            for _ in 0..epochs {
                let probs = softmax_rows(&(features * &w));
                w -= features.transpose() * (probs - y) * (lr / n);
            }
            LinearModel::new(w)
        }
    }
}

pub fn predict(head: &LinearModel, features: &Mat) -> Vec<usize> {
    let logits = head.logits(features);
    logits
        .row_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

fn score(head: &LinearModel, features: &Mat, test: &Dataset, config: EvalConfig) -> EvalResult {
    let pred = predict(head, features);
    let labels = test.labels();
    let c = test.classes();
    let mut hits = vec![0usize; c];
    let mut totals = vec![0usize; c];
    for (p, l) in pred.iter().zip(&labels) {
        totals[*l] += 1;
        if p == l {
            hits[*l] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    EvalResult {
        accuracy: correct as f64 / labels.len().max(1) as f64,
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect(),
        config,
    }
}

/// Accuracy of the squeeze head itself on `data`.
pub fn squeeze_head_accuracy(squeeze: &SqueezeArtifact, data: &Dataset) -> Result<f64> {
    let features = head_features(&squeeze.net, &data.h)?;
    let pred = predict(&squeeze.head, &features);
    let labels = data.labels();
    Ok(pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64)
}
