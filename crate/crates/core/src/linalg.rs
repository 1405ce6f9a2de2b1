//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{what} is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },
    #[error("{what}: expected {expected}x{expected}, got {rows}x{cols}")]
    Shape {
        what: &'static str,
        expected: usize,
        rows: usize,
        cols: usize,
    },
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn check_square(m: &DMatrix<f64>, n: usize, what: &'static str) -> Result<(), LinalgError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(LinalgError::Shape {
            what,
            expected: n,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Lower Cholesky factor of the symmetric part, or an error naming `what`.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, LinalgError> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.l())
        .ok_or(LinalgError::NotPositiveDefinite { what })
}

/// Eigenvalues `λ` of `A v = λ B v` for symmetric `A` and SPD `B`, ascending.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>, LinalgError> {
    let l = cholesky_lower(b, "generalized eigenproblem right-hand matrix")?;
    let linv = l.clone().try_inverse().ok_or(LinalgError::NotPositiveDefinite {
        what: "generalized eigenproblem right-hand matrix",
    })?;
    Ok(sym_eigenvalues(&(&linv * a * linv.transpose())))
}

/// `x^T M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        s += x[i] * row;
    }
    s
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return None;
    }
    Some(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}
