//! Desk-scale datasets, the squeeze phase, evaluation and comparison runs.

pub mod compare;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod squeeze;

pub use compare::{
    ablation_variants, compare_filters, filter_variants, mean_std, pooled_std, random_baseline, run_loss_ablation,
    run_variants, Comparison, Variant, VariantKind, VariantSummary, CONSTANT_BETAS,
};
pub use config::{CompareSection, NetSection, RunConfig, SqueezeSection, VariantEntry};
pub use dataset::{generate_gaussian_mixture, load_dataset, Dataset, MixtureConfig, Split};
pub use eval::{evaluate, EvalConfig, EvalResult, HeadKind};
pub use squeeze::{squeeze, SqueezeArtifact};
