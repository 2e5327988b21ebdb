//! Spectral filtering of positive semi-definite correlation matrices.
//!
//! A filter is a scalar function `f(λ)` applied to the eigenvalues of a PSD
//! matrix `M = U Λ Uᵀ`; applying it to a signal `S` yields `U f(Λ) Uᵀ S`.
//! Large eigenvalues correspond to low frequencies, so a filter that grows
//! with `λ` is low-pass and one that shrinks with `λ` is high-pass.
//!
//! Two evaluation routes are provided. [`apply_filter_spectral`] goes through
//! the eigendecomposition; [`apply_filter_direct`] uses plain matrix algebra
//! (products, shifted solves, repeated multiplication) and serves as its
//! independent check.

use std::fmt;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UniddError};
use crate::linalg::{frob, max_abs, shifted, solve_spd, Mat, Vector};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// A dense symmetric matrix that is expected to be positive semi-definite.
///
/// Symmetry is checked on construction; definiteness is checked by
/// [`eig_psd`], which is the only place the spectrum is available.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(Mat);

impl PsdMatrix {
    pub fn new(data: Mat) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(UniddError::ShapeMismatch(format!(
                "PSD matrix must be square, got {:?}",
                data.shape()
            )));
        }
        let asym = max_abs(&(&data - data.transpose()));
        let scale = max_abs(&data).max(1.0);
        if asym > SYMMETRY_TOL * scale {
            return Err(UniddError::NotSymmetric(asym));
        }
        Ok(PsdMatrix(data))
    }

    /// `XᵀX`, symmetric by construction.
    pub fn gram_of(x: &Mat) -> Self {
        PsdMatrix(crate::linalg::gram(x))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }
}

/// Eigenvectors (columns) and descending eigenvalues of a PSD matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigvecs: Mat,
    pub eigvals: Vector,
}

impl Spectrum {
    pub fn largest(&self) -> f64 {
        self.eigvals.iter().copied().next().unwrap_or(0.0)
    }

    /// `U diag(values) Uᵀ`.
    pub fn compose(&self, values: &[f64]) -> Mat {
        let mut scaled = self.eigvecs.clone();
        for (j, v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*v);
        }
        scaled * self.eigvecs.transpose()
    }
}

/// Eigendecomposition of a PSD matrix with eigenvalues sorted descending.
///
/// Eigenvalues in `[-1e-8·max(1, λ₁), 0)` are clamped to zero; anything
/// more negative is rejected.
pub fn eig_psd(m: &PsdMatrix) -> Result<Spectrum> {
    let d = m.dim();
    if d == 0 {
        return Ok(Spectrum {
            eigvecs: Mat::zeros(0, 0),
            eigvals: Vector::zeros(0),
        });
    }
    let eig = SymmetricEigen::try_new(m.0.clone(), f64::EPSILON, 10_000)
        .ok_or(UniddError::NoConvergence)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigvecs = Mat::zeros(d, d);
    let mut eigvals = Vector::zeros(d);
    for (dst, &src) in order.iter().enumerate() {
        eigvecs.set_column(dst, &eig.eigenvectors.column(src));
        eigvals[dst] = eig.eigenvalues[src];
    }
    let floor = -PSD_TOL * eigvals[0].max(1.0);
    let min = eigvals[d - 1];
    if !min.is_finite() || min < floor {
        return Err(UniddError::NotPsd(min));
    }
    for v in eigvals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(Spectrum { eigvecs, eigvals })
}

/// A scalar filter function on eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    /// `f(λ) = 1`.
    AllPass,
    /// `f(λ) = λ`.
    LowPassLinear,
    /// `f(λ) = (1 − αλ)^exponent`.
    HighPassPower { alpha: f64, exponent: u32 },
    /// `f(λ) = (λ + β)⁻¹`.
    HighPassShiftInverse { beta: f64 },
    /// `f(λ) = Σ_{p<horizon} (1 − αλ)^p`, the signal branch of a GD trajectory.
    TrajectoryPolySum { alpha: f64, horizon: u32 },
}

impl FilterSpec {
    pub fn name(&self) -> String {
        match *self {
            FilterSpec::AllPass => "all_pass".into(),
            FilterSpec::LowPassLinear => "low_pass_linear".into(),
            FilterSpec::HighPassPower { alpha, exponent } => {
                format!("high_pass_power(alpha={alpha},p={exponent})")
            }
            FilterSpec::HighPassShiftInverse { beta } => format!("high_pass_shift_inverse(beta={beta})"),
            FilterSpec::TrajectoryPolySum { alpha, horizon } => {
                format!("trajectory_poly_sum(alpha={alpha},p={horizon})")
            }
        }
    }

    fn step(&self) -> Option<f64> {
        match *self {
            FilterSpec::HighPassPower { alpha, .. } | FilterSpec::TrajectoryPolySum { alpha, .. } => {
                Some(alpha)
            }
            _ => None,
        }
    }

    /// Rejects `α·λ_max ≥ 1` for the step-size based filters.
    pub fn check_stable(&self, lambda_max: f64) -> Result<()> {
        if let Some(alpha) = self.step() {
            let product = alpha * lambda_max;
            if !(product < 1.0) {
                return Err(UniddError::UnstableFilter(product));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterSpec::HighPassPower { alpha, .. } | FilterSpec::TrajectoryPolySum { alpha, .. }
                if !(alpha > 0.0 && alpha.is_finite()) =>
            {
                Err(UniddError::InvalidConfig(format!("alpha must be positive, got {alpha}")))
            }
            FilterSpec::TrajectoryPolySum { horizon: 0, .. } => {
                Err(UniddError::InvalidConfig("trajectory horizon must be positive".into()))
            }
            FilterSpec::HighPassShiftInverse { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(UniddError::InvalidConfig(format!("beta must be non-negative, got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Evaluates `f(λ)` for a single eigenvalue.
///
/// The step-size filters accept `αλ ≤ 1` here (the boundary value is the
/// finite `0^p`); whole-spectrum operations apply the stricter `αλ₁ < 1`
/// guard through [`FilterSpec::check_stable`].
pub fn filter_response(spec: &FilterSpec, lambda: f64) -> Result<f64> {
    spec.validate()?;
    if !(lambda >= 0.0) {
        return Err(UniddError::OutOfRange(format!("eigenvalue {lambda} is negative")));
    }
    if let Some(alpha) = spec.step() {
        if alpha * lambda > 1.0 {
            return Err(UniddError::UnstableFilter(alpha * lambda));
        }
    }
    let value = match *spec {
        FilterSpec::AllPass => 1.0,
        FilterSpec::LowPassLinear => lambda,
        FilterSpec::HighPassPower { alpha, exponent } => (1.0 - alpha * lambda).powi(exponent as i32),
        FilterSpec::HighPassShiftInverse { beta } => {
            let denom = lambda + beta;
            if denom <= 0.0 {
                return Err(UniddError::SingularSystem("lambda + beta = 0".into()));
            }
            1.0 / denom
        }
        FilterSpec::TrajectoryPolySum { alpha, horizon } => {
            let r = 1.0 - alpha * lambda;
            let mut term = 1.0;
            let mut sum = 0.0;
            for _ in 0..horizon {
                sum += term;
                term *= r;
            }
            sum
        }
    };
    Ok(value)
}

/// `f(M)` as a dense matrix via the eigendecomposition.
pub fn filter_matrix_spectral(spec: &FilterSpec, m: &PsdMatrix) -> Result<Mat> {
    let spectrum = eig_psd(m)?;
    spec.check_stable(spectrum.largest())?;
    let values = spectrum
        .eigvals
        .iter()
        .map(|&l| filter_response(spec, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(spectrum.compose(&values))
}

/// `U f(Λ) Uᵀ S`.
pub fn apply_filter_spectral(spec: &FilterSpec, m: &PsdMatrix, signal: &Mat) -> Result<Mat> {
    check_signal(m, signal)?;
    if matches!(spec, FilterSpec::AllPass) {
        spec.validate()?;
        return Ok(signal.clone());
    }
    Ok(filter_matrix_spectral(spec, m)? * signal)
}

/// `f(M) S` by direct matrix algebra, without an eigendecomposition.
///
/// No stability guard is applied to the step-size filters; this is the
/// reference route and computes whatever the polynomial gives.
pub fn apply_filter_direct(spec: &FilterSpec, m: &PsdMatrix, signal: &Mat) -> Result<Mat> {
    check_signal(m, signal)?;
    spec.validate()?;
    let mat = m.as_mat();
    let out = match *spec {
        FilterSpec::AllPass => signal.clone(),
        FilterSpec::LowPassLinear => mat * signal,
        FilterSpec::HighPassShiftInverse { beta } => solve_spd(&shifted(mat, beta), signal)?,
        FilterSpec::HighPassPower { alpha, exponent } => {
            let step = shifted(&(mat * -alpha), 1.0);
            let mut acc = signal.clone();
            for _ in 0..exponent {
                acc = &step * acc;
            }
            acc
        }
        FilterSpec::TrajectoryPolySum { alpha, horizon } => {
            // Horner: S + A(S + A(S + ...))
            let step = shifted(&(mat * -alpha), 1.0);
            let mut acc = signal.clone();
            for _ in 1..horizon {
                acc = signal + &step * acc;
            }
            acc
        }
    };
    Ok(out)
}

fn check_signal(m: &PsdMatrix, signal: &Mat) -> Result<()> {
    if signal.nrows() != m.dim() {
        return Err(UniddError::ShapeMismatch(format!(
            "signal has {} rows, matrix is {}x{}",
            signal.nrows(),
            m.dim(),
            m.dim()
        )));
    }
    Ok(())
}

/// Frequency behaviour of a filter over a grid of eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterClass {
    AllPass,
    LowPass,
    HighPass,
    Mixed,
}

impl fmt::Display for FilterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterClass::AllPass => "all-pass",
            FilterClass::LowPass => "low-pass",
            FilterClass::HighPass => "high-pass",
            FilterClass::Mixed => "mixed",
        })
    }
}

/// Classifies a filter by the monotonicity of its response on an ascending grid.
pub fn classify_filter(spec: &FilterSpec, grid: &[f64]) -> Result<FilterClass> {
    if grid.len() < 2 {
        return Err(UniddError::InvalidConfig("classification grid needs at least 2 points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(UniddError::InvalidConfig("classification grid must be strictly ascending".into()));
    }
    let values = grid
        .iter()
        .map(|&l| filter_response(spec, l))
        .collect::<Result<Vec<_>>>()?;
    let scale = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-12 * scale;
    if values.iter().all(|v| (v - 1.0).abs() <= tol) {
        return Ok(FilterClass::AllPass);
    }
    let non_decreasing = values.windows(2).all(|w| w[1] >= w[0] - tol);
    let non_increasing = values.windows(2).all(|w| w[1] <= w[0] + tol);
    Ok(if non_decreasing {
        FilterClass::LowPass
    } else if non_increasing {
        FilterClass::HighPass
    } else {
        FilterClass::Mixed
    })
}

/// Evenly spaced grid `min, …, max` with `steps` points.
pub fn linear_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 || !(max > min) || min < 0.0 {
        return Err(UniddError::InvalidConfig(format!(
            "grid {min}:{max}:{steps} must satisfy 0 <= min < max and steps >= 2"
        )));
    }
    let h = (max - min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| if i + 1 == steps { max } else { min + h * i as f64 })
        .collect())
}

/// Filter responses over a grid as CSV.
///
/// A single filter produces the header `lambda,response`; several filters
/// get one column each, named by the supplied labels.
pub fn response_csv(filters: &[(String, FilterSpec)], grid: &[f64]) -> Result<String> {
    let mut out = String::from("lambda");
    if filters.len() == 1 {
        out.push_str(",response");
    } else {
        for (label, _) in filters {
            out.push(',');
            out.push_str(label);
        }
    }
    out.push('\n');
    for &lambda in grid {
        out.push_str(&format!("{lambda}"));
        for (_, spec) in filters {
            out.push_str(&format!(",{}", filter_response(spec, lambda)?));
        }
        out.push('\n');
    }
    Ok(out)
}

/// `‖UΛUᵀ − M‖_F` and `‖UᵀU − I‖_∞` for a computed spectrum.
pub fn spectrum_errors(m: &PsdMatrix, s: &Spectrum) -> (f64, f64) {
    let recon = s.compose(s.eigvals.as_slice());
    let d = m.dim();
    let ortho = max_abs(&(s.eigvecs.transpose() * &s.eigvecs - Mat::identity(d, d)));
    (frob(&(recon - m.as_mat())), ortho)
}
