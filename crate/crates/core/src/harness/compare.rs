//! Multi-config, multi-seed comparison runs: filter choice, curriculum vs
//! constant `β`, loss-term ablation and the random-real-subset baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfm::{distill, CfmConfig, MatchFilter, ScheduleKind};
use crate::error::{Result, UniddError};
use crate::harness::dataset::Dataset;
use crate::harness::eval::{evaluate, EvalConfig};
use crate::harness::squeeze::SqueezeArtifact;

/// Constant ridge values of the filter-choice comparison.
pub const CONSTANT_BETAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// IPC-balanced real samples without optimization.
    Random,
    Curriculum,
    ConstantBeta,
    LowPass,
    FilterOnly,
    FilterSignal,
    AllTerms,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub kind: VariantKind,
    pub config: CfmConfig,
}

impl Variant {
    pub fn new(name: impl Into<String>, kind: VariantKind, config: CfmConfig) -> Self {
        Variant {
            name: name.into(),
            kind,
            config,
        }
    }
}

/// The random baseline: the same initialization with no optimizer steps.
pub fn random_baseline(base: &CfmConfig) -> Variant {
    Variant::new("random", VariantKind::Random, CfmConfig { iterations: 0, ..*base })
}

/// Random baseline, curriculum, one constant-`β` run per [`CONSTANT_BETAS`] entry and the low-pass run.
pub fn filter_variants(base: &CfmConfig) -> Vec<Variant> {
    let mut out = vec![
        random_baseline(base),
        Variant::new("cfm", VariantKind::Curriculum, *base),
    ];
    for beta in CONSTANT_BETAS {
        out.push(Variant::new(
            format!("beta={beta:e}"),
            VariantKind::ConstantBeta,
            CfmConfig {
                beta,
                schedule: ScheduleKind::Constant,
                ..*base
            },
        ));
    }
    let mut low = *base;
    low.loss.filter = MatchFilter::Linear;
    out.push(Variant::new("low_pass", VariantKind::LowPass, low));
    out
}

/// Filter-only, filter+signal and all three loss terms on top of `base`.
pub fn ablation_variants(base: &CfmConfig) -> Vec<Variant> {
    let with = |cls: bool, signal: bool| {
        let mut c = *base;
        c.loss.use_cls = cls;
        c.loss.use_filter = true;
        c.loss.use_signal = signal;
        c
    };
    vec![
        Variant::new("filter", VariantKind::FilterOnly, with(false, false)),
        Variant::new("filter+signal", VariantKind::FilterSignal, with(false, true)),
        Variant::new("filter+signal+cls", VariantKind::AllTerms, with(true, true)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub kind: VariantKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<VariantSummary>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// `sqrt((s_a² + s_b²)/2)`, the pooled std of two equal-size groups.
pub fn pooled_std(a: &VariantSummary, b: &VariantSummary) -> f64 {
    ((a.std * a.std + b.std * b.std) / 2.0).sqrt()
}

impl Comparison {
    pub fn get(&self, name: &str) -> Option<&VariantSummary> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn of_kind(&self, kind: VariantKind) -> impl Iterator<Item = &VariantSummary> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// Row with the highest mean among `kind`.
    pub fn best_of(&self, kind: VariantKind) -> Option<&VariantSummary> {
        self.of_kind(kind).max_by(|a, b| a.mean.total_cmp(&b.mean))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,kind,seeds,mean,std,accuracies\n");
        for r in &self.rows {
            let kind = serde_json::to_value(r.kind).expect("kind serializes");
            let accs: Vec<String> = r.accuracies.iter().map(|a| a.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.name,
                kind.as_str().unwrap_or_default(),
                r.seeds.len(),
                r.mean,
                r.std,
                accs.join(";")
            ));
        }
        out
    }
}

/// Distills and evaluates every `(variant, seed)` pair. Runs fan out over the
/// current rayon pool; rows come back in variant order, accuracies in seed order.
pub fn run_variants(
    train: &Dataset,
    test: &Dataset,
    squeeze: &SqueezeArtifact,
    variants: &[Variant],
    seeds: &[u64],
    eval: &EvalConfig,
) -> Result<Comparison> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(UniddError::InvalidConfig("comparison needs at least one config and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let (synthetic, _) = distill(train, squeeze, &variants[v].config, seed)?;
            Ok(evaluate(&synthetic.data, squeeze, test, eval)?.accuracy)
        })
        .collect::<Result<_>>()?;
    let rows = variants
        .iter()
        .zip(accs.chunks(seeds.len()))
        .map(|(v, a)| {
            let (mean, std) = mean_std(a);
            VariantSummary {
                name: v.name.clone(),
                kind: v.kind,
                config_hash: v.config.hash(),
                seeds: seeds.to_vec(),
                accuracies: a.to_vec(),
                mean,
                std,
            }
        })
        .collect();
    Ok(Comparison { rows })
}

/// Filter-choice comparison; needs at least two configs.
pub fn compare_filters(
    train: &Dataset,
    test: &Dataset,
    squeeze: &SqueezeArtifact,
    variants: &[Variant],
    seeds: &[u64],
    eval: &EvalConfig,
) -> Result<Comparison> {
    if variants.len() < 2 {
        return Err(UniddError::InvalidConfig("compare_filters needs at least two configs".into()));
    }
    run_variants(train, test, squeeze, variants, seeds, eval)
}

pub fn run_loss_ablation(
    train: &Dataset,
    test: &Dataset,
    squeeze: &SqueezeArtifact,
    base: &CfmConfig,
    seeds: &[u64],
    eval: &EvalConfig,
) -> Result<Comparison> {
    run_variants(train, test, squeeze, &ablation_variants(base), seeds, eval)
}
