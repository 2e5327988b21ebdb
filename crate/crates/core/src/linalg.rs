//! Small dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, UniddError};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Condition-number ceiling for shifted SPD solves.
pub const MAX_CONDITION: f64 = 1e12;

pub fn frob_sq(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn frob(m: &Mat) -> f64 {
    frob_sq(m).sqrt()
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `‖a − b‖_F / max(1, ‖b‖_F)`.
pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    frob(&(a - b)) / frob(b).max(1.0)
}

pub fn check_same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(UniddError::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `AᵀA` with the result forced exactly symmetric.
pub fn gram(a: &Mat) -> Mat {
    let g = a.transpose() * a;
    symmetrize(&g)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn shifted(m: &Mat, shift: f64) -> Mat {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += shift;
    }
    out
}

/// Solves `a x = rhs` for symmetric positive definite `a` by Cholesky.
///
/// The ratio of the largest to smallest squared Cholesky pivot is a lower
/// bound on the 2-norm condition number; systems above [`MAX_CONDITION`]
/// are rejected.
pub fn solve_spd(a: &Mat, rhs: &Mat) -> Result<Mat> {
    if a.nrows() != a.ncols() || a.nrows() != rhs.nrows() {
        return Err(UniddError::ShapeMismatch(format!(
            "solve: system {:?}, rhs {:?}",
            a.shape(),
            rhs.shape()
        )));
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| UniddError::SingularSystem("matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..a.nrows() {
        let p = l[(i, i)] * l[(i, i)];
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if a.nrows() > 0 && (lo <= 0.0 || hi / lo > MAX_CONDITION) {
        return Err(UniddError::SingularSystem(format!(
            "condition estimate {:e} exceeds {:e}",
            hi / lo,
            MAX_CONDITION
        )));
    }
    let x = chol.solve(rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(UniddError::SingularSystem("non-finite solution".into()));
    }
    Ok(x)
}

/// `(a + shift·I)⁻¹ rhs`.
pub fn solve_shifted(a: &Mat, shift: f64, rhs: &Mat) -> Result<Mat> {
    solve_spd(&shifted(a, shift), rhs)
}

/// `(a + shift·I)⁻¹`, formed by solving against the identity.
pub fn inverse_shifted(a: &Mat, shift: f64) -> Result<Mat> {
    let n = a.nrows();
    let inv = solve_shifted(a, shift, &Mat::identity(n, n))?;
    Ok(symmetrize(&inv))
}

/// Dense matrix from row slices; panics on ragged input.
pub fn from_rows(rows: &[&[f64]]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_spd_matches_hand_solution() {
        let a = from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let b = from_rows(&[&[1.0], &[2.0]]);
        let x = solve_spd(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[(1, 0)] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn solve_spd_rejects_singular() {
        let a = from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let b = Mat::identity(2, 2);
        assert!(matches!(solve_spd(&a, &b), Err(UniddError::SingularSystem(_))));
    }

    #[test]
    fn solve_spd_rejects_ill_conditioned() {
        let a = from_rows(&[&[1.0, 0.0], &[0.0, 1e-14]]);
        let b = Mat::identity(2, 2);
        assert!(matches!(solve_spd(&a, &b), Err(UniddError::SingularSystem(_))));
    }
}
