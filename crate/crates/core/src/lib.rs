//! Dataset distillation objectives viewed as spectral filters on feature
//! correlation matrices, and curriculum frequency matching.
//!
//! * [`spectral`]: PSD eigendecomposition and filter functions `f(λ)`.
//! * [`features`]: the fixed feature net and per-layer `Ψ`/`Φ` statistics.
//! * [`objectives`]: classical distillation losses and their unified forms.
//! * [`cfm`]: curriculum frequency matching.
//! * [`harness`]: datasets, squeeze, evaluation and comparison runs.
//! * [`verify`]: the numerical property battery.

pub mod cfm;
pub mod error;
pub mod features;
pub mod harness;
pub mod linalg;
pub mod objectives;
pub mod rng;
pub mod spectral;
pub mod verify;

pub use error::{Result, UniddError};
