//! Curriculum frequency matching.
//!
//! Synthetic batches are optimized so that, layer by layer, the high-pass
//! filtered covariance `(Ψs + β_tI)⁻¹` and filtered class signal
//! `(Ψs + β_tI)⁻¹Φs` match those of the real data, with `β_t` annealed by a
//! cosine schedule so that different batches emphasize different frequency
//! bands.

pub mod distill;
pub mod grad;
pub mod loss;
pub mod optim;
pub mod schedule;

pub use distill::{distill, CfmConfig, CurriculumAxis, LossRecord, LossReport, Provenance, SyntheticDataset};
pub use grad::{grad_synthetic, Evaluation, SyntheticObjective};
pub use loss::{cfm_losses, cls_loss, total_loss, LossSettings, MatchFilter, NormKind};
pub use optim::OptimizerConfig;
pub use schedule::{CurriculumSchedule, ScheduleKind};
