//! Filter-matching, signal-matching and classification losses.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UniddError};
use crate::features::{CorrStats, EmuState};
use crate::linalg::{frob, inverse_shifted, Mat};

/// Below this Frobenius norm the norm's subgradient is taken as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Which matrix function of the covariance enters the matching losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchFilter {
    /// `(Ψ + βI)⁻¹`, high-pass.
    #[default]
    ShiftInverse,
    /// `Ψ` itself, low-pass.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Frobenius,
    SquaredFrobenius,
}

impl NormKind {
    fn value(self, m: &Mat) -> f64 {
        match self {
            NormKind::Frobenius => frob(m),
            NormKind::SquaredFrobenius => crate::linalg::frob_sq(m),
        }
    }

    /// Derivative of the norm with respect to `m`.
    fn grad(self, m: &Mat) -> Mat {
        match self {
            NormKind::Frobenius => {
                let n = frob(m);
                if n < NORM_EPS {
                    Mat::zeros(m.nrows(), m.ncols())
                } else {
                    m / n
                }
            }
            NormKind::SquaredFrobenius => m * 2.0,
        }
    }
}

/// Which terms of the total loss are active, and how matching is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSettings {
    pub eta: f64,
    pub filter: MatchFilter,
    pub norm: NormKind,
    pub use_cls: bool,
    pub use_filter: bool,
    pub use_signal: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            eta: 0.1,
            filter: MatchFilter::ShiftInverse,
            norm: NormKind::Frobenius,
            use_cls: true,
            use_filter: true,
            use_signal: true,
        }
    }
}

/// `f(Ψ)` for the configured matching filter.
pub fn filtered(filter: MatchFilter, psi: &Mat, beta: f64) -> Result<Mat> {
    match filter {
        MatchFilter::ShiftInverse => inverse_shifted(psi, beta),
        MatchFilter::Linear => Ok(psi.clone()),
    }
}

/// Loss values of one layer and their gradients with respect to the synthetic
/// `Ψs`/`Φs`, for the weighted sum `w_filter·L_filter + w_signal·L_signal`.
#[derive(Debug, Clone)]
pub struct LayerMatch {
    pub l_filter: f64,
    pub l_signal: f64,
    pub grad_psi: Mat,
    pub grad_phi: Mat,
}

pub fn match_layer(
    real: &CorrStats,
    psi_s: &Mat,
    phi_s: &Mat,
    beta: f64,
    filter: MatchFilter,
    norm: NormKind,
    weights: (f64, f64),
) -> Result<LayerMatch> {
    if psi_s.shape() != real.psi.as_mat().shape() || phi_s.shape() != real.phi.shape() {
        return Err(UniddError::ShapeMismatch(format!(
            "synthetic stats {:?}/{:?} vs real {:?}/{:?}",
            psi_s.shape(),
            phi_s.shape(),
            real.psi.as_mat().shape(),
            real.phi.shape()
        )));
    }
    let (w_filter, w_signal) = weights;
    let f_real = filtered(filter, real.psi.as_mat(), beta)?;
    let f_synth = filtered(filter, psi_s, beta)?;

    let filter_diff = &f_real - &f_synth;
    let signal_diff = &f_real * &real.phi - &f_synth * phi_s;
    let l_filter = norm.value(&filter_diff);
    let l_signal = norm.value(&signal_diff);

    // ∂/∂f(Ψs) and ∂/∂Φs of the weighted losses
    let g_filter = norm.grad(&filter_diff) * w_filter;
    let g_signal = norm.grad(&signal_diff) * w_signal;
    let grad_f = -(g_filter + &g_signal * phi_s.transpose());
    let grad_phi = -(f_synth.transpose() * &g_signal);
    let grad_psi = match filter {
        // d(M⁻¹) = −M⁻¹ dM M⁻¹
        MatchFilter::ShiftInverse => -(f_synth.transpose() * grad_f * f_synth.transpose()),
        MatchFilter::Linear => grad_f,
    };
    Ok(LayerMatch {
        l_filter,
        l_signal,
        grad_psi,
        grad_phi,
    })
}

/// `(Σ_l ‖f(Ψ^l) − f(Ψs^l)‖, Σ_l ‖f(Ψ^l)Φ^l − f(Ψs^l)Φs^l‖)` with the default
/// inverse filter and unsquared norms.
pub fn cfm_losses(real: &[CorrStats], synth: &[EmuState], beta: f64) -> Result<(f64, f64)> {
    cfm_losses_with(real, synth, beta, MatchFilter::ShiftInverse, NormKind::Frobenius)
}

pub fn cfm_losses_with(
    real: &[CorrStats],
    synth: &[EmuState],
    beta: f64,
    filter: MatchFilter,
    norm: NormKind,
) -> Result<(f64, f64)> {
    if real.len() != synth.len() {
        return Err(UniddError::ShapeMismatch(format!(
            "{} real layers vs {} synthetic layers",
            real.len(),
            synth.len()
        )));
    }
    let mut totals = (0.0, 0.0);
    for (r, s) in real.iter().zip(synth) {
        let m = match_layer(r, &s.psi_s, &s.phi_s, beta, filter, norm, (0.0, 0.0))?;
        totals.0 += m.l_filter;
        totals.1 += m.l_signal;
    }
    Ok(totals)
}

/// `L_cls + η·L_filter + η·L_signal`.
pub fn total_loss(l_cls: f64, l_filter: f64, l_signal: f64, eta: f64) -> f64 {
    l_cls + eta * l_filter + eta * l_signal
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean softmax cross-entropy against one-hot labels.
pub fn cls_loss(logits: &Mat, labels: &Mat) -> Result<f64> {
    crate::linalg::check_same_shape(logits, labels, "logits vs labels")?;
    let mut total = 0.0;
    for (row, y) in logits.row_iter().zip(labels.row_iter()) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let target: f64 = row.iter().zip(y.iter()).map(|(v, t)| v * t).sum();
        total += lse - target;
    }
    Ok(total / logits.nrows().max(1) as f64)
}

/// `∂ cls_loss / ∂ logits`.
pub fn cls_loss_grad(logits: &Mat, labels: &Mat) -> Mat {
    (softmax_rows(logits) - labels) / logits.nrows().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{corr_stats, one_hot, FeatureMap};
    use crate::rng::seeded;
    use crate::spectral::{apply_filter_spectral, FilterSpec, PsdMatrix};
    use rand::Rng;

    fn random_stats(rng: &mut impl Rng, n: usize, d: usize, c: usize) -> CorrStats {
        let data = Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        corr_stats(&FeatureMap::new(data, d, 1, 1, 1).unwrap(), &one_hot(&labels, c)).unwrap()
    }

    fn as_emu(s: &CorrStats) -> EmuState {
        EmuState {
            psi_s: s.psi.as_mat().clone(),
            phi_s: s.phi.clone(),
            count: 1,
        }
    }

    #[test]
    fn identical_stats_give_zero() {
        let mut rng = seeded(1);
        let s = random_stats(&mut rng, 8, 3, 2);
        assert_eq!(cfm_losses(&[s.clone()], &[as_emu(&s)], 0.1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn zero_covariances_reduce_to_signal_difference() {
        let mut rng = seeded(2);
        let phi = Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let phi_s = Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let real = CorrStats {
            psi: PsdMatrix::new(Mat::zeros(3, 3)).unwrap(),
            phi: phi.clone(),
        };
        let synth = EmuState {
            psi_s: Mat::zeros(3, 3),
            phi_s: phi_s.clone(),
            count: 1,
        };
        let (lf, ls) = cfm_losses(&[real], &[synth], 1.0).unwrap();
        assert_eq!(lf, 0.0);
        assert!((ls - frob(&(phi - phi_s))).abs() < 1e-15);
    }

    #[test]
    fn matches_spectral_filter_route() {
        let mut rng = seeded(3);
        let real = random_stats(&mut rng, 12, 4, 3);
        let synth = random_stats(&mut rng, 6, 4, 3);
        let beta = 0.05;
        let (lf, ls) = cfm_losses(&[real.clone()], &[as_emu(&synth)], beta).unwrap();
        let spec = FilterSpec::HighPassShiftInverse { beta };
        let eye = Mat::identity(4, 4);
        let fr = apply_filter_spectral(&spec, &real.psi, &eye).unwrap();
        let fs = apply_filter_spectral(&spec, &synth.psi, &eye).unwrap();
        let sr = apply_filter_spectral(&spec, &real.psi, &real.phi).unwrap();
        let ss = apply_filter_spectral(&spec, &synth.psi, &synth.phi).unwrap();
        assert!((lf - frob(&(fr - fs))).abs() < 1e-8 * lf.max(1.0));
        assert!((ls - frob(&(sr - ss))).abs() < 1e-8 * ls.max(1.0));
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.3, 5.0, 7.0, 0.0), 1.3);
        assert!((total_loss(1.0, 2.0, 3.0, 0.1) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_cases() {
        let c = 10;
        let labels = one_hot(&[3, 7], c);
        let uniform = Mat::zeros(2, c);
        assert!((cls_loss(&uniform, &labels).unwrap() - (10.0_f64).ln()).abs() < 1e-12);

        let mut confident = Mat::zeros(2, c);
        confident[(0, 3)] = 60.0;
        confident[(1, 7)] = 60.0;
        assert!(cls_loss(&confident, &labels).unwrap() < 1e-20);

        let mut rng = seeded(4);
        let logits = Mat::from_fn(4, 3, |_, _| rng.random_range(-3.0..3.0));
        let y = one_hot(&[0, 2, 1, 2], 3);
        let mut expect = 0.0;
        for i in 0..4 {
            let denom: f64 = (0..3).map(|j| logits[(i, j)].exp()).sum();
            let target = (0..3).find(|&j| y[(i, j)] == 1.0).unwrap();
            expect -= (logits[(i, target)].exp() / denom).ln();
        }
        assert!((cls_loss(&logits, &y).unwrap() - expect / 4.0).abs() < 1e-12);
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = seeded(5);
        let real = random_stats(&mut rng, 10, 3, 2);
        let synth = random_stats(&mut rng, 5, 3, 2);
        for (filter, norm) in [
            (MatchFilter::ShiftInverse, NormKind::Frobenius),
            (MatchFilter::ShiftInverse, NormKind::SquaredFrobenius),
            (MatchFilter::Linear, NormKind::Frobenius),
        ] {
            let weights = (0.7, 1.3);
            let eval = |psi: &Mat, phi: &Mat| {
                let m = match_layer(&real, psi, phi, 0.2, filter, norm, weights).unwrap();
                weights.0 * m.l_filter + weights.1 * m.l_signal
            };
            let base = match_layer(&real, synth.psi.as_mat(), &synth.phi, 0.2, filter, norm, weights).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                // Ψs is symmetric, so perturb both triangles together
                for j in 0..=i {
                    let mut p = synth.psi.as_mat().clone();
                    let mut m = p.clone();
                    p[(i, j)] += h;
                    m[(i, j)] -= h;
                    if i != j {
                        p[(j, i)] += h;
                        m[(j, i)] -= h;
                    }
                    let fd = (eval(&p, &synth.phi) - eval(&m, &synth.phi)) / (2.0 * h);
                    let g = if i == j {
                        base.grad_psi[(i, i)]
                    } else {
                        base.grad_psi[(i, j)] + base.grad_psi[(j, i)]
                    };
                    assert!((fd - g).abs() < 1e-6, "{filter:?} psi {i}{j}: fd {fd} vs {g}");
                }
                for j in 0..2 {
                    let mut p = synth.phi.clone();
                    let mut m = p.clone();
                    p[(i, j)] += h;
                    m[(i, j)] -= h;
                    let fd = (eval(synth.psi.as_mat(), &p) - eval(synth.psi.as_mat(), &m)) / (2.0 * h);
                    assert!((fd - base.grad_phi[(i, j)]).abs() < 1e-6, "{filter:?} phi {i}{j}");
                }
            }
        }
    }
}
