//! Single-cone semidefinite programs with one free scalar:
//!
//! ```text
//! minimize    c_t·t + <C, X>
//! subject to  a_i·t + <A_i, X> = b_i,   X ⪰ 0
//! ```
//!
//! Backends are registered by name; `ipm` exploits rank-one constraint
//! matrices `A_i = n_i n_iᵀ`, `ipm-dense` forms the Schur complement
//! densely and serves as a cross-check.

mod ipm;
mod presolve;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;

pub use ipm::InteriorPoint;
pub use presolve::{presolve, Presolved};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("infeasible: dependent constraints disagree by {inconsistency:e}")]
    Infeasible { inconsistency: f64 },
    #[error("no convergence in {iterations} iterations (primal {primal:e}, dual {dual:e}, gap {gap:e})")]
    MaxIterations {
        iterations: usize,
        primal: f64,
        dual: f64,
        gap: f64,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum RowMatrix {
    /// `n nᵀ`.
    RankOne(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl RowMatrix {
    pub fn inner(&self, x: &DMatrix<f64>) -> f64 {
        match self {
            RowMatrix::RankOne(n) => (n.transpose() * x * n)[0],
            RowMatrix::Dense(a) => a.dot(x),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            RowMatrix::RankOne(n) => n * n.transpose(),
            RowMatrix::Dense(a) => a.clone(),
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            RowMatrix::RankOne(n) => n.amax().powi(2),
            RowMatrix::Dense(a) => a.amax(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpRow {
    pub scalar: f64,
    pub matrix: RowMatrix,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem {
    pub dim: usize,
    pub c_scalar: f64,
    pub c_matrix: Option<DMatrix<f64>>,
    pub rows: Vec<SdpRow>,
}

impl SdpProblem {
    pub fn new(dim: usize) -> Self {
        SdpProblem {
            dim,
            c_scalar: 0.0,
            c_matrix: None,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, scalar: f64, matrix: RowMatrix, rhs: f64) {
        self.rows.push(SdpRow { scalar, matrix, rhs });
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let bad = |m: String| Err(SdpError::Invalid(m));
        if self.dim == 0 {
            return bad("matrix dimension is zero".into());
        }
        if self.rows.is_empty() {
            return bad("no constraints".into());
        }
        if let Some(c) = &self.c_matrix {
            if c.nrows() != self.dim || c.ncols() != self.dim {
                return bad("objective matrix has wrong shape".into());
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            let ok = match &r.matrix {
                RowMatrix::RankOne(n) => n.len() == self.dim,
                RowMatrix::Dense(a) => a.nrows() == self.dim && a.ncols() == self.dim,
            };
            if !ok {
                return bad(format!("row {i} has wrong dimension"));
            }
            if !(r.scalar.is_finite() && r.rhs.is_finite()) {
                return bad(format!("row {i} has non-finite data"));
            }
        }
        Ok(())
    }

    pub fn is_rank_one(&self) -> bool {
        self.rows.iter().all(|r| matches!(r.matrix, RowMatrix::RankOne(_)))
    }

    /// Divides each row by its largest absolute coefficient.
    pub fn normalize_rows(&mut self) {
        for r in &mut self.rows {
            let s = r.scalar.abs().max(r.matrix.max_abs());
            if s > 0.0 {
                r.scalar /= s;
                r.rhs /= s;
                match &mut r.matrix {
                    RowMatrix::RankOne(n) => *n /= s.sqrt(),
                    RowMatrix::Dense(a) => *a /= s,
                }
            }
        }
    }

    /// Largest `|a_i t + <A_i, X> - b_i|` over all rows.
    pub fn max_residual(&self, t: f64, x: &DMatrix<f64>) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.scalar * t + r.matrix.inner(x) - r.rhs).abs())
            .fold(0.0, f64::max)
    }

    pub fn objective(&self, t: f64, x: &DMatrix<f64>) -> f64 {
        self.c_scalar * t + self.c_matrix.as_ref().map_or(0.0, |c| c.dot(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdpOptions {
    /// Relative primal, dual and gap tolerance.
    pub tol: f64,
    /// When `tol` is not reached (stall, lost definiteness, iteration cap),
    /// the best iterate is returned if its primal and dual residuals are
    /// within `accept_tol` and its relative gap within `accept_gap`.
    pub accept_tol: f64,
    pub accept_gap: f64,
    pub max_iter: usize,
    /// Relative pivot threshold for dropping dependent rows.
    pub presolve_tol: f64,
    /// Allowed disagreement of dependent rows, relative to `max(1, |b|∞)`.
    pub consistency_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            tol: 1e-9,
            accept_tol: 1e-6,
            accept_gap: 1e-4,
            max_iter: 120,
            presolve_tol: 1e-12,
            consistency_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpSolution {
    pub scalar: f64,
    pub matrix: DMatrix<f64>,
    /// Multipliers for the original rows (zero for rows removed by presolve).
    pub dual: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Largest residual over all original rows.
    pub primal_residual: f64,
    pub gap: f64,
    pub rows_kept: usize,
}

pub trait SdpBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &SdpProblem, options: &SdpOptions) -> Result<SdpSolution, SdpError>;
}

pub fn backends() -> Registry<dyn SdpBackend> {
    let mut r: Registry<dyn SdpBackend> = Registry::new("sdp backend");
    r.register("ipm", Arc::new(InteriorPoint { exploit_rank_one: true }));
    r.register(
        "ipm-dense",
        Arc::new(InteriorPoint {
            exploit_rank_one: false,
        }),
    );
    r
}
