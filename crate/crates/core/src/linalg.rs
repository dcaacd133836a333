//! Small dense helpers on top of nalgebra shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &Mat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Definiteness threshold used for cost matrices: `1e-9 * (1 + ||m||)`.
pub fn definiteness_threshold(m: &Mat) -> f64 {
    1e-9 * (1.0 + spectral_norm(m))
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    symmetrize(&(v * Mat::from_diagonal(&mapped) * v.transpose()))
}

/// Inverse of a symmetric positive definite matrix, with its condition number.
pub fn spd_inverse(m: &Mat, what: &str) -> Result<(Mat, f64)> {
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eig: lo,
            threshold: 0.0,
        });
    }
    Ok((sym_apply(m, |x| 1.0 / x), hi / lo))
}

pub fn spd_inv_sqrt(m: &Mat) -> Mat {
    sym_apply(m, |x| 1.0 / x.max(f64::MIN_POSITIVE).sqrt())
}

/// `λ_max(Q^{-1/2} P Q^{-1/2})`, i.e. the largest `r` with `xᵀPx = r·xᵀQx`.
pub fn max_generalized_eigenvalue(p: &Mat, q_inv_sqrt: &Mat) -> f64 {
    max_eigenvalue(&(q_inv_sqrt * p * q_inv_sqrt))
}

pub fn quad_form(p: &Mat, x: &Vector) -> f64 {
    (x.transpose() * p * x)[(0, 0)]
}

/// `Aᵀ P A`, symmetrized.
pub fn congruence(a: &Mat, p: &Mat) -> Mat {
    symmetrize(&(a.transpose() * p * a))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what}: ragged rows")));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn vector(values: &[f64]) -> Vector {
    Vector::from_column_slice(values)
}
