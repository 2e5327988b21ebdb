//! Cosine annealing of the ridge parameter of the `(λ + β)⁻¹` filter.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UniddError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `β_t = max(floor, β·(1 + cos(πt/T))/2)`.
    #[default]
    Cosine,
    /// `β_t = β` for every step.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumSchedule {
    pub kind: ScheduleKind,
    pub beta_max: f64,
    pub total_steps: usize,
    pub beta_floor: f64,
}

impl CurriculumSchedule {
    pub fn cosine(beta_max: f64, total_steps: usize, beta_floor: f64) -> Result<Self> {
        Self::new(ScheduleKind::Cosine, beta_max, total_steps, beta_floor)
    }

    pub fn new(kind: ScheduleKind, beta_max: f64, total_steps: usize, beta_floor: f64) -> Result<Self> {
        if !(beta_max >= 0.0 && beta_max.is_finite()) {
            return Err(UniddError::InvalidConfig(format!("beta must be non-negative, got {beta_max}")));
        }
        if total_steps == 0 {
            return Err(UniddError::InvalidConfig("schedule needs at least one step".into()));
        }
        if !(beta_floor > 0.0 && beta_floor.is_finite()) {
            return Err(UniddError::InvalidConfig(format!("beta floor must be positive, got {beta_floor}")));
        }
        Ok(CurriculumSchedule {
            kind,
            beta_max,
            total_steps,
            beta_floor,
        })
    }

    pub fn beta_at(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return Err(UniddError::OutOfRange(format!(
                "step {t} beyond schedule length {}",
                self.total_steps
            )));
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.beta_max,
            ScheduleKind::Cosine => {
                let phase = std::f64::consts::PI * t as f64 / self.total_steps as f64;
                (self.beta_max * (1.0 + phase.cos()) / 2.0).max(self.beta_floor)
            }
        })
    }
}

/// `1e-6·max(1, tr(Ψ)/d)`, the smallest usable ridge for a real covariance.
pub fn default_floor(trace_over_dim: f64) -> f64 {
    1e-6 * trace_over_dim.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let s = CurriculumSchedule::cosine(0.1, 10, 1e-6).unwrap();
        assert!((s.beta_at(0).unwrap() - 0.1).abs() < 1e-12);
        assert!((s.beta_at(10).unwrap() - 1e-6).abs() < 1e-12);
        let s = CurriculumSchedule::cosine(1.0, 10, 1e-6).unwrap();
        assert!((s.beta_at(5).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(s.beta_at(11), Err(UniddError::OutOfRange(_))));
    }

    #[test]
    fn constant_schedule() {
        let s = CurriculumSchedule::new(ScheduleKind::Constant, 0.01, 7, 1e-6).unwrap();
        assert!((0..=7).all(|t| s.beta_at(t).unwrap() == 0.01));
    }

    #[test]
    fn invalid_schedules() {
        assert!(CurriculumSchedule::cosine(-1.0, 3, 1e-6).is_err());
        assert!(CurriculumSchedule::cosine(1.0, 0, 1e-6).is_err());
        assert!(CurriculumSchedule::cosine(1.0, 3, 0.0).is_err());
    }
}
