//! First-order updates for the synthetic inputs.

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 0.03,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Per-batch optimizer state; created fresh for each synthetic batch.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Mat,
    second: Mat,
    steps: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, rows: usize, cols: usize) -> Self {
        Optimizer {
            config,
            first: Mat::zeros(rows, cols),
            second: Mat::zeros(rows, cols),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut Mat, grad: &Mat) {
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => *params -= grad * lr,
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                self.first = &self.first * beta1 + grad * (1.0 - beta1);
                self.second = &self.second * beta2 + grad.component_mul(grad) * (1.0 - beta2);
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                params.zip_zip_apply(&self.first, &self.second, |p, m, v| {
                    *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                });
            }
        }
    }
}
