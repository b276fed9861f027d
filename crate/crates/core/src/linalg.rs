//! Dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used for symmetry and definiteness checks.
pub const SPD_TOL: f64 = 1e-10;

/// Builds a matrix from row slices. All rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, Error> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != m) {
        return Err(Error::DimensionMismatch {
            what: "matrix row",
            expected: m,
            found: bad.len(),
        });
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Keeps the diagonal, zeroes everything else.
pub fn diag_part(m: &Matrix) -> Matrix {
    Matrix::from_diagonal(&m.diagonal())
}

pub fn is_diagonal(m: &Matrix) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Smallest eigenvalue of a symmetric matrix, its eigenvector, and the
/// largest absolute eigenvalue.
pub fn extreme_eigen(m: &Matrix) -> (f64, Vector, f64) {
    let eig = symmetrize(m).symmetric_eigen();
    let mut idx = 0;
    for (k, v) in eig.eigenvalues.iter().enumerate() {
        if *v < eig.eigenvalues[idx] {
            idx = k;
        }
    }
    let largest = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (
        eig.eigenvalues[idx],
        eig.eigenvectors.column(idx).into_owned(),
        largest,
    )
}

/// Square, symmetric within `SPD_TOL` (relative) and strictly positive
/// definite with eigenvalues above `SPD_TOL` times the largest one.
pub fn ensure_spd(m: &Matrix) -> Result<(), Error> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asym = asymmetry(m);
    if asym > SPD_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: f64::NAN,
        });
    }
    let (min, _, largest) = extreme_eigen(m);
    if !(min > SPD_TOL * largest) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky_lower(m: &Matrix) -> Result<Matrix, Error> {
    let min_eigenvalue = || extreme_eigen(m).0;
    symmetrize(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite {
            min_eigenvalue: min_eigenvalue(),
        })
}

pub fn spd_inverse(m: &Matrix) -> Result<Matrix, Error> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            min_eigenvalue: extreme_eigen(m).0,
        })?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn inverse(m: &Matrix) -> Result<Matrix, Error> {
    m.clone().try_inverse().ok_or(Error::Singular)
}

/// Largest modulus among the (complex) eigenvalues.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .schur()
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, z| acc.max(libm::hypot(z.re, z.im)))
}

/// Orthonormal basis of the right null space, as matrix columns.
///
/// Singular values at or below `rel_tol * σ_max` count as zero. Wide matrices
/// are padded with zero rows so the SVD returns a full right basis.
pub fn null_space(m: &Matrix, rel_tol: f64) -> Matrix {
    let cols = m.ncols();
    let rows = m.nrows().max(cols);
    let mut padded = Matrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |a, s| a.max(*s));
    let threshold = rel_tol * sigma_max;
    let basis: Vec<Vector> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= threshold)
        .map(|(k, _)| v_t.row(k).transpose())
        .collect();
    if basis.is_empty() {
        Matrix::zeros(cols, 0)
    } else {
        Matrix::from_columns(&basis)
    }
}
