//! Total CFM loss of a synthetic batch and its exact gradient with respect to
//! the batch inputs.
//!
//! The reverse pass runs, per layer, through: the norm of the matching
//! residuals, the shifted inverse, the running-mean update (only the current
//! batch's `1/b` share depends on the inputs), the centered covariance and
//! class-sum statistics, then back through `tanh` and the fixed layers. The
//! classification term enters through the frozen head on the last layer's
//! spatial average.

use crate::cfm::loss::{cls_loss, cls_loss_grad, match_layer, LossSettings};
use crate::error::{Result, UniddError};
use crate::features::{
    center_columns, corr_stats, emu_update, reshape_channels, spatial_average, unreshape_channels, CorrStats,
    EmuState, FeatureMap, FeatureNet,
};
use crate::linalg::Mat;
use crate::objectives::LinearModel;

/// Everything held fixed while a synthetic batch is optimized.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticObjective<'a> {
    pub net: &'a FeatureNet,
    pub head: &'a LinearModel,
    pub real: &'a [CorrStats],
    pub beta: f64,
    pub settings: LossSettings,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub l_cls: f64,
    pub l_filter: f64,
    pub l_signal: f64,
    pub l_total: f64,
    /// `∂L_total/∂Hs`; empty when not requested.
    pub grad: Mat,
    /// Running-mean state after observing this batch.
    pub emu: Vec<EmuState>,
}

fn spread_average_grad(grad_avg: &Mat, hw: usize) -> Mat {
    if hw == 1 {
        return grad_avg.clone();
    }
    let (n, d) = grad_avg.shape();
    Mat::from_fn(n, d * hw, |i, col| grad_avg[(i, col / hw)] / hw as f64)
}

impl SyntheticObjective<'_> {
    /// Loss at `hs` given the running-mean state `prev` from earlier
    /// observations, and optionally its gradient.
    pub fn evaluate(&self, hs: &Mat, ys: &Mat, prev: &[EmuState], want_grad: bool) -> Result<Evaluation> {
        let layers = self.net.depth();
        if self.real.len() != layers || prev.len() != layers {
            return Err(UniddError::ShapeMismatch(format!(
                "net has {layers} layers, real stats {}, running state {}",
                self.real.len(),
                prev.len()
            )));
        }
        let s = &self.settings;
        let maps = self.net.forward(hs)?;
        let match_weights = (
            if s.use_filter { s.eta } else { 0.0 },
            if s.use_signal { s.eta } else { 0.0 },
        );
        let matching = s.use_filter || s.use_signal;

        let mut l_filter = 0.0;
        let mut l_signal = 0.0;
        let mut emu = Vec::with_capacity(layers);
        let mut layer_grads = Vec::with_capacity(layers);
        for (l, map) in maps.iter().enumerate() {
            let batch = corr_stats(map, ys)?;
            let state = emu_update(&prev[l], &batch)?;
            let mut grad = Mat::zeros(map.data.nrows(), map.data.ncols());
            if matching {
                let lm = match_layer(
                    &self.real[l],
                    &state.psi_s,
                    &state.phi_s,
                    self.beta,
                    s.filter,
                    s.norm,
                    match_weights,
                )?;
                if s.use_filter {
                    l_filter += lm.l_filter;
                }
                if s.use_signal {
                    l_signal += lm.l_signal;
                }
                if want_grad {
                    let w = state.current_weight();
                    grad += stats_backward(map, ys, &(lm.grad_psi * w), &(lm.grad_phi * w))?;
                }
            }
            emu.push(state);
            layer_grads.push(grad);
        }

        let mut l_cls = 0.0;
        if s.use_cls {
            let last = maps.last().expect("net has at least one layer");
            let logits = self.head.logits(&spatial_average(last));
            l_cls = cls_loss(&logits, ys)?;
            if want_grad {
                let g_avg = cls_loss_grad(&logits, ys) * self.head.weights.transpose();
                *layer_grads.last_mut().expect("non-empty") += spread_average_grad(&g_avg, last.hw());
            }
        }

        let grad = if want_grad {
            let g = self.net.backward(&maps, layer_grads)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(UniddError::NonFiniteGradient);
            }
            g
        } else {
            Mat::zeros(0, 0)
        };
        Ok(Evaluation {
            l_cls,
            l_filter,
            l_signal,
            l_total: super::loss::total_loss(l_cls, l_filter, l_signal, s.eta),
            grad,
            emu,
        })
    }
}

/// Pulls `∂L/∂Ψ` and `∂L/∂Φ` of one batch's statistics back to its feature map.
///
/// `Ψ = (1/N) CᵀC` with `C` the column-centered channel view, so
/// `∂L/∂X̂ = (1/N) C (G + Gᵀ)`; centering drops out because `C` has zero column sums.
/// `Φ = (1/n) X′ᵀY` gives `∂L/∂X′ = (1/n) Y Gᵀ`.
fn stats_backward(map: &FeatureMap, ys: &Mat, grad_psi: &Mat, grad_phi: &Mat) -> Result<Mat> {
    let x_hat = reshape_channels(map);
    let centered = center_columns(&x_hat);
    let rows = x_hat.nrows() as f64;
    let g_hat = &centered * (grad_psi + grad_psi.transpose()) / rows;
    let from_psi = unreshape_channels(&g_hat, map.height, map.width, map.layer)?.data;
    let g_avg = ys * grad_phi.transpose() / map.samples() as f64;
    Ok(from_psi + spread_average_grad(&g_avg, map.hw()))
}

/// Gradient of the total loss with respect to a synthetic batch, using the
/// default matching settings with weight `eta`.
#[allow(clippy::too_many_arguments)]
pub fn grad_synthetic(
    net: &FeatureNet,
    head: &LinearModel,
    hs: &Mat,
    ys: &Mat,
    real: &[CorrStats],
    prev: &[EmuState],
    beta: f64,
    eta: f64,
) -> Result<Mat> {
    let objective = SyntheticObjective {
        net,
        head,
        real,
        beta,
        settings: LossSettings {
            eta,
            ..LossSettings::default()
        },
    };
    Ok(objective.evaluate(hs, ys, prev, true)?.grad)
}

/// Fresh running-mean state for every layer of `net`.
pub fn empty_state(net: &FeatureNet, classes: usize) -> Vec<EmuState> {
    net.layer_channels()
        .into_iter()
        .map(|d| EmuState::new(d, classes))
        .collect()
}
