//! Classical distillation objectives for a linear classifier on fixed features,
//! in their native form and in the unified filter form
//! `‖f(XᵀX) g(XᵀY) − f(XsᵀXs) g(XsᵀYs)‖²_F`.
//!
//! Conventions: `X` is `n × d`, `Y` is `n × c`, `Xs` is `m × d`, `Ys` is
//! `m × c`, weights are `d × c`. The classifier gradient is `Xᵀ(XW − Y)`,
//! without the factor 2 from differentiating the squared norm; trajectories
//! are built on that gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UniddError};
use crate::linalg::{frob_sq, gram, max_abs_diff, shifted, solve_shifted, solve_spd, Mat};
use crate::spectral::{apply_filter_spectral, eig_psd, FilterSpec, PsdMatrix};

/// Weights of a linear classifier, `d × c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Mat,
}

impl LinearModel {
    pub fn new(weights: Mat) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(UniddError::InvalidConfig("linear model has non-finite weights".into()));
        }
        Ok(LinearModel { weights })
    }

    pub fn zeros(d: usize, c: usize) -> Self {
        LinearModel {
            weights: Mat::zeros(d, c),
        }
    }

    pub fn logits(&self, features: &Mat) -> Mat {
        features * &self.weights
    }
}

/// Full-batch gradient descent setup shared by the real and synthetic runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryConfig {
    pub alpha: f64,
    /// Steps on the real data.
    pub real_steps: u32,
    /// Steps on the synthetic data.
    pub synthetic_steps: u32,
    pub init: LinearModel,
}

/// Second argument of the unified objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GMode {
    /// Compare the filtered operators themselves.
    Identity,
    /// Filter the feature-label correlation `XᵀY`.
    Flc,
}

fn check_pair(x: &Mat, y: &Mat, what: &str) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(UniddError::ShapeMismatch(format!(
            "{what}: {} feature rows vs {} label rows",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

fn check_instance(x: &Mat, y: &Mat, xs: &Mat, ys: &Mat) -> Result<()> {
    check_pair(x, y, "real")?;
    check_pair(xs, ys, "synthetic")?;
    if x.ncols() != xs.ncols() || y.ncols() != ys.ncols() {
        return Err(UniddError::ShapeMismatch(format!(
            "real is {}x{} features/{} classes, synthetic {}x{}/{}",
            x.nrows(),
            x.ncols(),
            y.ncols(),
            xs.nrows(),
            xs.ncols(),
            ys.ncols()
        )));
    }
    Ok(())
}

fn check_weights(x: &Mat, y: &Mat, w: &LinearModel) -> Result<()> {
    if w.weights.shape() != (x.ncols(), y.ncols()) {
        return Err(UniddError::ShapeMismatch(format!(
            "weights {:?}, expected {}x{}",
            w.weights.shape(),
            x.ncols(),
            y.ncols()
        )));
    }
    Ok(())
}

fn filtered_term(f: &FilterSpec, g: GMode, x: &Mat, y: &Mat) -> Result<Mat> {
    let ffc = PsdMatrix::gram_of(x);
    let signal = match g {
        GMode::Identity => Mat::identity(x.ncols(), x.ncols()),
        GMode::Flc => x.transpose() * y,
    };
    apply_filter_spectral(f, &ffc, &signal)
}

/// `‖f(XᵀX) g(XᵀY) − f(XsᵀXs) g(XsᵀYs)‖²_F`.
pub fn unified_loss(f: &FilterSpec, g: GMode, x: &Mat, y: &Mat, xs: &Mat, ys: &Mat) -> Result<f64> {
    check_instance(x, y, xs, ys)?;
    let real = filtered_term(f, g, x, y)?;
    let synth = filtered_term(f, g, xs, ys)?;
    Ok(frob_sq(&(real - synth)))
}

/// Distribution matching: `‖XᵀY − XsᵀYs‖²_F`, i.e. per-class feature sums.
pub fn dm_loss(x: &Mat, y: &Mat, xs: &Mat, ys: &Mat) -> Result<f64> {
    check_instance(x, y, xs, ys)?;
    Ok(frob_sq(&(x.transpose() * y - xs.transpose() * ys)))
}

fn column_means(x: &Mat) -> Mat {
    let n = x.nrows().max(1) as f64;
    Mat::from_fn(1, x.ncols(), |_, j| x.column(j).sum() / n)
}

fn gram_diagonal(x: &Mat) -> Mat {
    Mat::from_fn(1, x.ncols(), |_, j| x.column(j).norm_squared())
}

/// BN-statistics matching: second-moment diagonals plus column means.
pub fn srel_bn_loss(x: &Mat, xs: &Mat) -> Result<f64> {
    if x.ncols() != xs.ncols() {
        return Err(UniddError::ShapeMismatch(format!(
            "{} vs {} feature columns",
            x.ncols(),
            xs.ncols()
        )));
    }
    let diag = gram_diagonal(x) - gram_diagonal(xs);
    let mean = column_means(x) - column_means(xs);
    Ok(frob_sq(&diag) + frob_sq(&mean))
}

/// `Xᵀ(XW − Y)`.
pub fn grad_classifier(x: &Mat, y: &Mat, w: &LinearModel) -> Result<Mat> {
    check_pair(x, y, "classifier")?;
    check_weights(x, y, w)?;
    Ok(x.transpose() * (x * &w.weights - y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientMatchTerms {
    /// `‖∇ − ∇s‖²_F`.
    pub native: f64,
    /// `‖W‖²_F ‖XᵀX − XsᵀXs‖²_F`.
    pub ffc_term: f64,
    /// `‖XᵀY − XsᵀYs‖²_F`.
    pub flc_term: f64,
    /// Max-abs error of `∇ − ∇s = ΔFFC·W − ΔFLC`.
    pub identity_error: f64,
}

impl GradientMatchTerms {
    pub fn bound_holds(&self) -> bool {
        self.native <= 2.0 * (self.ffc_term + self.flc_term) * (1.0 + 1e-12) + 1e-300
    }

    pub fn unscaled_bound_holds(&self) -> bool {
        self.native <= (self.ffc_term + self.flc_term) * (1.0 + 1e-12)
    }
}

pub fn gradient_match_decomposition(
    x: &Mat,
    y: &Mat,
    xs: &Mat,
    ys: &Mat,
    w: &LinearModel,
) -> Result<GradientMatchTerms> {
    check_instance(x, y, xs, ys)?;
    let diff = grad_classifier(x, y, w)? - grad_classifier(xs, ys, w)?;
    let d_ffc = gram(x) - gram(xs);
    let d_flc = x.transpose() * y - xs.transpose() * ys;
    let rebuilt = &d_ffc * &w.weights - &d_flc;
    Ok(GradientMatchTerms {
        native: frob_sq(&diff),
        ffc_term: frob_sq(&w.weights) * frob_sq(&d_ffc),
        flc_term: frob_sq(&d_flc),
        identity_error: max_abs_diff(&diff, &rebuilt),
    })
}

fn check_step(x: &Mat, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(UniddError::InvalidConfig(format!("step size must be positive, got {alpha}")));
    }
    let lambda_max = eig_psd(&PsdMatrix::gram_of(x))?.largest();
    FilterSpec::HighPassPower { alpha, exponent: 1 }.check_stable(lambda_max)?;
    Ok(lambda_max)
}

/// `steps` iterations of `W ← W − α Xᵀ(XW − Y)` from the configured start.
pub fn gd_trajectory(x: &Mat, y: &Mat, cfg: &TrajectoryConfig, steps: u32) -> Result<LinearModel> {
    check_pair(x, y, "trajectory")?;
    check_weights(x, y, &cfg.init)?;
    check_step(x, cfg.alpha)?;
    let mut w = cfg.init.weights.clone();
    for _ in 0..steps {
        w -= (x.transpose() * (x * &w - y)) * cfg.alpha;
    }
    LinearModel::new(w)
}

/// `(I − αXᵀX)^K W⁰ + α Σ_{k<K} (I − αXᵀX)^k XᵀY`, evaluated spectrally.
pub fn gd_closed_form(x: &Mat, y: &Mat, cfg: &TrajectoryConfig, steps: u32) -> Result<LinearModel> {
    check_pair(x, y, "trajectory")?;
    check_weights(x, y, &cfg.init)?;
    check_step(x, cfg.alpha)?;
    if steps == 0 {
        return Ok(cfg.init.clone());
    }
    let ffc = PsdMatrix::gram_of(x);
    let decay = FilterSpec::HighPassPower {
        alpha: cfg.alpha,
        exponent: steps,
    };
    let accumulate = FilterSpec::TrajectoryPolySum {
        alpha: cfg.alpha,
        horizon: steps,
    };
    let from_init = apply_filter_spectral(&decay, &ffc, &cfg.init.weights)?;
    let from_signal = apply_filter_spectral(&accumulate, &ffc, &(x.transpose() * y))?;
    LinearModel::new(from_init + from_signal * cfg.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryMatchTerms {
    /// `‖W^P − Ws^Q‖²_F`.
    pub native: f64,
    /// `‖A^P − B^Q‖²_F` with `A = I − αXᵀX`, `B = I − αXsᵀXs`.
    pub operator_term: f64,
    /// `α‖Σ_p A^p XᵀY − Σ_q B^q XsᵀYs‖²_F`.
    pub signal_term: f64,
    /// `‖W⁰‖²_F`.
    pub init_norm_sq: f64,
    pub alpha: f64,
    /// Max-abs error of the exact decomposition of `W^P − Ws^Q`.
    pub identity_error: f64,
}

impl TrajectoryMatchTerms {
    /// `native ≤ 2(‖W⁰‖²·operator + α·signal)`, from `‖a + b‖² ≤ 2‖a‖² + 2‖b‖²`.
    pub fn bound_holds(&self) -> bool {
        let rhs = 2.0 * (self.init_norm_sq * self.operator_term + self.alpha * self.signal_term);
        self.native <= rhs * (1.0 + 1e-12) + 1e-300
    }

    /// The bound with neither the factor 2 nor the `‖W⁰‖²`/`α` scaling.
    pub fn unscaled_bound_holds(&self) -> bool {
        self.native <= (self.operator_term + self.signal_term) * (1.0 + 1e-12)
    }
}

fn power_and_sum(x: &Mat, y: &Mat, alpha: f64, steps: u32) -> (Mat, Mat) {
    let d = x.ncols();
    let a = shifted(&(gram(x) * -alpha), 1.0);
    let signal = x.transpose() * y;
    let mut power = Mat::identity(d, d);
    let mut sum = Mat::zeros(d, y.ncols());
    for _ in 0..steps {
        sum += &power * &signal;
        power = &a * power;
    }
    (power, sum)
}

pub fn mtt_decomposition(
    x: &Mat,
    y: &Mat,
    xs: &Mat,
    ys: &Mat,
    cfg: &TrajectoryConfig,
) -> Result<TrajectoryMatchTerms> {
    check_instance(x, y, xs, ys)?;
    let w_real = gd_closed_form(x, y, cfg, cfg.real_steps)?;
    let w_synth = gd_closed_form(xs, ys, cfg, cfg.synthetic_steps)?;
    let diff = &w_real.weights - &w_synth.weights;

    let (a_p, sum_real) = power_and_sum(x, y, cfg.alpha, cfg.real_steps);
    let (b_q, sum_synth) = power_and_sum(xs, ys, cfg.alpha, cfg.synthetic_steps);
    let operator = a_p - b_q;
    let signal = sum_real - sum_synth;
    let rebuilt = &operator * &cfg.init.weights + &signal * cfg.alpha;

    Ok(TrajectoryMatchTerms {
        native: frob_sq(&diff),
        operator_term: frob_sq(&operator),
        signal_term: cfg.alpha * frob_sq(&signal),
        init_norm_sq: frob_sq(&cfg.init.weights),
        alpha: cfg.alpha,
        identity_error: max_abs_diff(&diff, &rebuilt),
    })
}

fn check_ridge(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(UniddError::InvalidConfig(format!("ridge beta must be positive, got {beta}")));
    }
    Ok(())
}

/// `‖Y − X Xsᵀ (XsXsᵀ + βI)⁻¹ Ys‖²_F`, the linear-kernel KRR residual.
pub fn krr_loss_gram(x: &Mat, y: &Mat, xs: &Mat, ys: &Mat, beta: f64) -> Result<f64> {
    check_instance(x, y, xs, ys)?;
    check_ridge(beta)?;
    let dual = solve_shifted(&(xs * xs.transpose()), beta, ys)?;
    let pred = x * (xs.transpose() * dual);
    Ok(frob_sq(&(y - pred)))
}

/// `‖(XᵀX + βI)⁻¹XᵀY − (XsᵀXs + βI)⁻¹XsᵀYs‖²_F`.
pub fn krr_loss_unified(x: &Mat, y: &Mat, xs: &Mat, ys: &Mat, beta: f64) -> Result<f64> {
    check_instance(x, y, xs, ys)?;
    let real = krr_ridge_solution(x, y, beta)?;
    let synth = krr_ridge_solution(xs, ys, beta)?;
    Ok(frob_sq(&(real.weights - synth.weights)))
}

/// The KRR loss with the real side in ridge form and the synthetic side in
/// Gram (dual) form: `‖W* − Xsᵀ(XsXsᵀ + βI)⁻¹Ys‖²_F`.
pub fn krr_loss_mixed(x: &Mat, y: &Mat, xs: &Mat, ys: &Mat, beta: f64) -> Result<f64> {
    check_instance(x, y, xs, ys)?;
    let real = krr_ridge_solution(x, y, beta)?;
    let dual = solve_shifted(&(xs * xs.transpose()), beta, ys)?;
    Ok(frob_sq(&(real.weights - xs.transpose() * dual)))
}

/// Max-abs difference between `Xsᵀ(XsXsᵀ + βI)⁻¹` and `(XsᵀXs + βI)⁻¹Xsᵀ`.
pub fn verify_identity_transform(xs: &Mat, beta: f64) -> Result<f64> {
    check_ridge(beta)?;
    // Xsᵀ M⁻¹ = (M⁻¹ Xs)ᵀ for symmetric M
    let gram_side = solve_shifted(&(xs * xs.transpose()), beta, xs)?.transpose();
    let ffc_side = solve_shifted(&gram(xs), beta, &xs.transpose())?;
    Ok(max_abs_diff(&gram_side, &ffc_side))
}

/// `(XᵀX + βI)⁻¹XᵀY`.
pub fn krr_ridge_solution(x: &Mat, y: &Mat, beta: f64) -> Result<LinearModel> {
    check_pair(x, y, "ridge")?;
    check_ridge(beta)?;
    LinearModel::new(solve_spd(&shifted(&gram(x), beta), &(x.transpose() * y))?)
}

/// Gradient of `‖XW − Y‖²_F + β‖W‖²_F`.
pub fn ridge_gradient(x: &Mat, y: &Mat, w: &LinearModel, beta: f64) -> Result<Mat> {
    check_pair(x, y, "ridge")?;
    check_weights(x, y, w)?;
    Ok((x.transpose() * (x * &w.weights - y) + &w.weights * beta) * 2.0)
}

/// Gradient of the dual objective `‖KW − Y‖²_F + β tr(WᵀKW)` for a Gram matrix `K`.
pub fn krr_dual_gradient(k: &Mat, y: &Mat, w: &Mat, beta: f64) -> Result<Mat> {
    if k.nrows() != k.ncols() || k.ncols() != w.nrows() || w.shape() != y.shape() {
        return Err(UniddError::ShapeMismatch(format!(
            "gram {:?}, weights {:?}, targets {:?}",
            k.shape(),
            w.shape(),
            y.shape()
        )));
    }
    Ok(k.transpose() * (k * w - y) * 2.0 + (k * w + k.transpose() * w) * beta)
}

/// `(K + βI)⁻¹Y` for a PSD Gram matrix.
pub fn krr_dual_solution(k: &Mat, y: &Mat, beta: f64) -> Result<Mat> {
    check_ridge(beta)?;
    solve_shifted(k, beta, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::one_hot;
    use crate::linalg::{frob, from_rows, rel_diff};
    use crate::rng::seeded;
    use rand::Rng;

    struct Instance {
        x: Mat,
        y: Mat,
        xs: Mat,
        ys: Mat,
    }

    fn instance(seed: u64, n: usize, m: usize, d: usize, c: usize) -> Instance {
        let mut rng = seeded(seed);
        let x = Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let xs = Mat::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        let y = one_hot(&(0..n).map(|i| i % c).collect::<Vec<_>>(), c);
        let ys = one_hot(&(0..m).map(|i| i % c).collect::<Vec<_>>(), c);
        Instance { x, y, xs, ys }
    }

    fn safe_alpha(x: &Mat, xs: &Mat) -> f64 {
        let l = eig_psd(&PsdMatrix::gram_of(x))
            .unwrap()
            .largest()
            .max(eig_psd(&PsdMatrix::gram_of(xs)).unwrap().largest());
        0.9 / l
    }

    #[test]
    fn identical_sets_have_zero_loss() {
        let t = instance(1, 12, 12, 4, 3);
        for f in [
            FilterSpec::AllPass,
            FilterSpec::LowPassLinear,
            FilterSpec::HighPassShiftInverse { beta: 0.5 },
        ] {
            for g in [GMode::Identity, GMode::Flc] {
                assert_eq!(unified_loss(&f, g, &t.x, &t.y, &t.x, &t.y).unwrap(), 0.0);
            }
        }
        assert_eq!(dm_loss(&t.x, &t.y, &t.x, &t.y).unwrap(), 0.0);
        assert_eq!(krr_loss_unified(&t.x, &t.y, &t.x, &t.y, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn all_pass_flc_is_distribution_matching() {
        let t = instance(2, 20, 6, 5, 3);
        let u = unified_loss(&FilterSpec::AllPass, GMode::Flc, &t.x, &t.y, &t.xs, &t.ys).unwrap();
        assert_eq!(u, dm_loss(&t.x, &t.y, &t.xs, &t.ys).unwrap());
    }

    #[test]
    fn dm_matches_class_sum_loop() {
        let t = instance(3, 15, 5, 4, 3);
        let mut expect = 0.0;
        for class in 0..3 {
            for j in 0..4 {
                let real: f64 = (0..15).filter(|i| i % 3 == class).map(|i| t.x[(i, j)]).sum();
                let synth: f64 = (0..5).filter(|i| i % 3 == class).map(|i| t.xs[(i, j)]).sum();
                expect += (real - synth).powi(2);
            }
        }
        assert!((dm_loss(&t.x, &t.y, &t.xs, &t.ys).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn dm_single_class_sufficient_statistic() {
        let x = from_rows(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let xs = from_rows(&[&[4.0, 1.0]]);
        let y = one_hot(&[0, 0], 1);
        let ys = one_hot(&[0], 1);
        assert_eq!(dm_loss(&x, &y, &xs, &ys).unwrap(), 0.0);
    }

    #[test]
    fn bn_loss_cases() {
        let t = instance(4, 8, 3, 3, 2);
        assert_eq!(srel_bn_loss(&t.x, &t.x).unwrap(), 0.0);
        let perm = Mat::from_fn(8, 3, |i, j| t.x[((i + 3) % 8, j)]);
        assert!(srel_bn_loss(&t.x, &perm).unwrap() < 1e-24);
        let mut expect = 0.0;
        for j in 0..3 {
            let dx: f64 = (0..8).map(|i| t.x[(i, j)].powi(2)).sum();
            let ds: f64 = (0..3).map(|i| t.xs[(i, j)].powi(2)).sum();
            let mx: f64 = (0..8).map(|i| t.x[(i, j)]).sum::<f64>() / 8.0;
            let ms: f64 = (0..3).map(|i| t.xs[(i, j)]).sum::<f64>() / 3.0;
            expect += (dx - ds).powi(2) + (mx - ms).powi(2);
        }
        assert!((srel_bn_loss(&t.x, &t.xs).unwrap() - expect).abs() < 1e-12);
        assert!(srel_bn_loss(&t.x, &Mat::zeros(2, 4)).is_err());
    }

    #[test]
    fn classifier_gradient_cases() {
        let x = Mat::identity(3, 3);
        let y = one_hot(&[0, 1, 1], 2);
        let w = LinearModel::new(from_rows(&[&[0.5, 0.1], &[0.2, 0.3], &[-1.0, 2.0]])).unwrap();
        assert_eq!(grad_classifier(&x, &y, &w).unwrap(), &w.weights - &y);

        let fit = LinearModel::new(y.clone()).unwrap();
        assert_eq!(grad_classifier(&x, &y, &fit).unwrap(), Mat::zeros(3, 2));
    }

    #[test]
    fn classifier_gradient_is_half_the_squared_loss_derivative() {
        let t = instance(5, 7, 2, 3, 2);
        let mut rng = seeded(55);
        let w = LinearModel::new(Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let loss = |w: &Mat| frob_sq(&(&t.x * w - &t.y));
        let g = grad_classifier(&t.x, &t.y, &w).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..2 {
                let mut plus = w.weights.clone();
                let mut minus = w.weights.clone();
                plus[(i, j)] += h;
                minus[(i, j)] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - 2.0 * g[(i, j)]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gradient_match_cases() {
        let t = instance(6, 10, 4, 3, 2);
        let mut rng = seeded(66);
        let w = LinearModel::new(Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let same = gradient_match_decomposition(&t.x, &t.y, &t.x, &t.y, &w).unwrap();
        assert_eq!((same.native, same.ffc_term, same.flc_term), (0.0, 0.0, 0.0));

        let terms = gradient_match_decomposition(&t.x, &t.y, &t.xs, &t.ys, &w).unwrap();
        assert!(terms.identity_error < 1e-10);
        assert!(terms.bound_holds());

        let zero = LinearModel::zeros(3, 2);
        let z = gradient_match_decomposition(&t.x, &t.y, &t.xs, &t.ys, &zero).unwrap();
        assert_eq!(z.ffc_term, 0.0);
        assert!((z.native - z.flc_term).abs() < 1e-12 * z.flc_term.max(1.0));
    }

    fn traj(alpha: f64, p: u32, q: u32, init: Mat) -> TrajectoryConfig {
        TrajectoryConfig {
            alpha,
            real_steps: p,
            synthetic_steps: q,
            init: LinearModel::new(init).unwrap(),
        }
    }

    #[test]
    fn trajectory_base_cases() {
        let t = instance(7, 9, 3, 3, 2);
        let mut rng = seeded(77);
        let w0 = Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let alpha = safe_alpha(&t.x, &t.xs);
        let cfg = traj(alpha, 3, 3, w0.clone());
        assert_eq!(gd_trajectory(&t.x, &t.y, &cfg, 0).unwrap().weights, w0);
        assert_eq!(gd_closed_form(&t.x, &t.y, &cfg, 0).unwrap().weights, w0);

        let one = gd_trajectory(&t.x, &t.y, &cfg, 1).unwrap();
        let a = shifted(&(gram(&t.x) * -alpha), 1.0);
        let expect = &a * &w0 + t.x.transpose() * &t.y * alpha;
        assert!(rel_diff(&one.weights, &expect) < 1e-14);

        for k in [1, 2, 5, 10] {
            let it = gd_trajectory(&t.x, &t.y, &cfg, k).unwrap();
            let cf = gd_closed_form(&t.x, &t.y, &cfg, k).unwrap();
            assert!(rel_diff(&cf.weights, &it.weights) < 1e-8);
        }
    }

    #[test]
    fn closed_form_geometric_series_on_orthonormal_features() {
        // XᵀX = I: each step contracts by (1 − α); from W⁰ = 0 the sum is
        // α Σ (1 − α)^k XᵀY = (1 − (1 − α)^K) XᵀY.
        let x = Mat::identity(3, 3);
        let y = one_hot(&[0, 1, 2], 3);
        let alpha = 0.3;
        let cfg = traj(alpha, 1, 1, Mat::zeros(3, 3));
        for k in [1u32, 4, 40] {
            let w = gd_closed_form(&x, &y, &cfg, k).unwrap();
            let scale: f64 = (0..k).map(|i| alpha * (1.0 - alpha).powi(i as i32)).sum();
            assert!(rel_diff(&w.weights, &(&y * scale)) < 1e-14);
            assert!((scale - (1.0 - (1.0 - alpha).powi(k as i32))).abs() < 1e-14);
        }
    }

    #[test]
    fn trajectory_rejects_divergent_step() {
        let t = instance(8, 9, 3, 3, 2);
        let l = eig_psd(&PsdMatrix::gram_of(&t.x)).unwrap().largest();
        let cfg = traj(1.0 / l, 2, 2, Mat::zeros(3, 2));
        assert!(matches!(
            gd_trajectory(&t.x, &t.y, &cfg, 2),
            Err(UniddError::UnstableFilter(_))
        ));
    }

    #[test]
    fn mtt_cases() {
        let t = instance(9, 12, 4, 3, 2);
        let alpha = safe_alpha(&t.x, &t.xs);
        let mut rng = seeded(99);
        let w0 = Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));

        let same = mtt_decomposition(&t.x, &t.y, &t.x, &t.y, &traj(alpha, 4, 4, w0.clone())).unwrap();
        assert_eq!(same.native, 0.0);
        assert_eq!(same.operator_term, 0.0);
        assert_eq!(same.signal_term, 0.0);

        let zero_init = mtt_decomposition(&t.x, &t.y, &t.xs, &t.ys, &traj(alpha, 5, 3, Mat::zeros(3, 2))).unwrap();
        assert!((zero_init.native - alpha * zero_init.signal_term).abs() < 1e-10 * zero_init.native.max(1.0));

        let terms = mtt_decomposition(&t.x, &t.y, &t.xs, &t.ys, &traj(alpha, 6, 4, w0)).unwrap();
        assert!(terms.identity_error < 1e-9);
        assert!(terms.bound_holds());
    }

    #[test]
    fn krr_hand_and_limit_cases() {
        let one = from_rows(&[&[1.0]]);
        assert!((krr_loss_gram(&one, &one, &one, &one, 1.0).unwrap() - 0.25).abs() < 1e-15);

        let t = instance(10, 6, 3, 8, 2);
        let zeros = Mat::zeros(3, 2);
        let y_norm = frob_sq(&t.y);
        assert!((krr_loss_gram(&t.x, &t.y, &t.xs, &zeros, 0.1).unwrap() - y_norm).abs() < 1e-12);

        // n = 6 rows in d = 8: full row rank, so the predictor interpolates
        let interp = krr_loss_gram(&t.x, &t.y, &t.x, &t.y, 1e-8).unwrap();
        assert!(interp < 1e-10, "{interp}");
    }

    #[test]
    fn krr_unified_equals_mixed_and_filter_forms() {
        let t = instance(11, 25, 5, 4, 3);
        let beta = 0.2;
        let unified = krr_loss_unified(&t.x, &t.y, &t.xs, &t.ys, beta).unwrap();
        let mixed = krr_loss_mixed(&t.x, &t.y, &t.xs, &t.ys, beta).unwrap();
        let filter = unified_loss(
            &FilterSpec::HighPassShiftInverse { beta },
            GMode::Flc,
            &t.x,
            &t.y,
            &t.xs,
            &t.ys,
        )
        .unwrap();
        assert!((unified - mixed).abs() < 1e-9 * unified.max(1.0));
        assert!((unified - filter).abs() < 1e-9 * unified.max(1.0));
    }

    #[test]
    fn identity_transform_cases() {
        assert_eq!(verify_identity_transform(&Mat::zeros(3, 5), 0.1).unwrap(), 0.0);
        let t = instance(12, 3, 7, 5, 2);
        assert!(verify_identity_transform(&t.x, 0.1).unwrap() < 1e-10);
        let u = instance(13, 7, 2, 2, 2);
        assert!(verify_identity_transform(&u.x, 1.0).unwrap() < 1e-10);
    }

    #[test]
    fn ridge_solution_cases() {
        let y = one_hot(&[0, 1, 1], 2);
        let w = krr_ridge_solution(&Mat::identity(3, 3), &y, 1.0).unwrap();
        assert!(rel_diff(&w.weights, &(&y / 2.0)) < 1e-15);

        let t = instance(14, 20, 2, 4, 3);
        let big = krr_ridge_solution(&t.x, &t.y, 1e8).unwrap();
        let approx = t.x.transpose() * &t.y / 1e8;
        assert!(frob(&(&big.weights - &approx)) < 1e-12);
        assert!(frob(&big.weights) < 1e-6);

        let w = krr_ridge_solution(&t.x, &t.y, 0.3).unwrap();
        assert!(frob(&ridge_gradient(&t.x, &t.y, &w, 0.3).unwrap()) < 1e-8);

        let k = gram(&t.x.transpose());
        let dual = krr_dual_solution(&k, &t.y, 0.3).unwrap();
        assert!(frob(&krr_dual_gradient(&k, &t.y, &dual, 0.3).unwrap()) < 1e-8);
    }

    #[test]
    fn krr_gram_is_permutation_invariant() {
        let t = instance(15, 10, 4, 3, 2);
        let order = [2, 0, 3, 1];
        let xs = Mat::from_fn(4, 3, |i, j| t.xs[(order[i], j)]);
        let ys = Mat::from_fn(4, 2, |i, j| t.ys[(order[i], j)]);
        let a = krr_loss_gram(&t.x, &t.y, &t.xs, &t.ys, 0.5).unwrap();
        let b = krr_loss_gram(&t.x, &t.y, &xs, &ys, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }
}
