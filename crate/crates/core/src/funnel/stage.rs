use nalgebra::{DMatrix, DVector};

use super::FunnelError;
use crate::linalg::{cholesky_lower, min_eigenvalue, symmetrize};
use crate::poly::{BasisSpec, MultiPoly};
use crate::sampling::{DisturbanceSet, SampleBatch};
use crate::sdp::{RowMatrix, SdpBackend, SdpOptions, SdpProblem};

/// Smallest Gram basis degree `b` with `2b ≥ 2d + deg D`, where
/// `deg D = max(2, taylor + 1)`.
pub fn required_basis_degree(d: u32, taylor_degree: u32) -> u32 {
    let deg_d = (taylor_degree + 1).max(2);
    (2 * d + deg_d).div_ceil(2)
}

/// `D_k(x̄, w; ρ₊) = ρ₊/Δt + rest(x̄, w)` with
/// `rest = -½ x̄ᵀP_{k+1}x̄/Δt - f_k(x̄, w)ᵀ P_k x̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConstraint {
    pub rest: MultiPoly,
    pub rho_coefficient: f64,
    pub state_dim: usize,
}

impl StageConstraint {
    pub fn eval(&self, xbar: &[f64], w: &[f64], rho_next: f64) -> f64 {
        self.rho_coefficient * rho_next + self.eval_rest(xbar, w)
    }

    pub fn eval_rest(&self, xbar: &[f64], w: &[f64]) -> f64 {
        let z: Vec<f64> = xbar.iter().chain(w).copied().collect();
        self.rest.eval_unchecked(&z)
    }

    /// The full polynomial in `(x̄, w)` for a fixed `ρ₊`.
    pub fn polynomial(&self, rho_next: f64) -> MultiPoly {
        &self.rest + &MultiPoly::constant(self.rest.nvars(), self.rho_coefficient * rho_next)
    }
}

pub fn build_stage_constraint(
    p_k: &DMatrix<f64>,
    p_next: &DMatrix<f64>,
    dt: f64,
    dynamics: &[MultiPoly],
) -> Result<StageConstraint, FunnelError> {
    if !(dt > 0.0) {
        return Err(FunnelError::Config(format!("time step must be positive, got {dt}")));
    }
    let n = p_k.nrows();
    if dynamics.len() != n {
        return Err(FunnelError::Config(format!(
            "{} dynamics polynomials for {n} states",
            dynamics.len()
        )));
    }
    let nv = dynamics.first().map_or(n, MultiPoly::nvars);
    let x: Vec<MultiPoly> = (0..n).map(|i| MultiPoly::var(nv, i)).collect();
    let mut rest = MultiPoly::zero(nv);
    for i in 0..n {
        for j in 0..n {
            let c = -0.5 * p_next[(i, j)] / dt;
            if c != 0.0 {
                rest = &rest + &(&x[i] * &x[j]).scale(c);
            }
        }
    }
    for (i, fi) in dynamics.iter().enumerate() {
        let mut px = MultiPoly::zero(nv);
        for j in 0..n {
            if p_k[(i, j)] != 0.0 {
                px = &px + &x[j].scale(p_k[(i, j)]);
            }
        }
        rest = &rest - &(fi * &px);
    }
    Ok(StageConstraint {
        rest,
        rho_coefficient: 1.0 / dt,
        state_dim: n,
    })
}

/// Everything one stage SDP needs.
#[derive(Clone, Debug)]
pub struct StageProblem<'a> {
    pub step: usize,
    pub dt: f64,
    pub rho: f64,
    pub p: &'a DMatrix<f64>,
    pub constraint: &'a StageConstraint,
    pub batch: &'a SampleBatch,
    pub basis: &'a BasisSpec,
    pub d: u32,
    /// Absolute margin `ε`.
    pub eps: f64,
    /// Multiplier scales; `None` uses `ρ_k/(P_k)_jj`.
    pub scales: Option<&'a [f64]>,
    pub disturbance: &'a DisturbanceSet,
}

/// Builds one normalized equality row `ñᵀQñ + a τ = b` for a sample pair.
///
/// The basis is evaluated at whitened coordinates `z = Lᵀx̄` and `v = L_Uᵀw`
/// (with `P_k/ρ_k = L Lᵀ`, `U = L_U L_Uᵀ`), and `τ = ρ_{k+1}/ρ_k`. Rows are
/// first scaled by `Δt/(ρ_k c̄)`, with `c̄` the mean multiplier over `B_k`,
/// so that the Gram matrix stays O(1) whatever the size of the slice.
pub(crate) struct RowBuilder<'a> {
    l: DMatrix<f64>,
    lu: &'a DMatrix<f64>,
    basis: &'a BasisSpec,
    /// `1/s_j²` for the multiplier.
    weights: Vec<f64>,
    d: u32,
    eps: f64,
    rho: f64,
    dt: f64,
    /// Common positive row scale `Δt/(ρ_k c̄)`.
    kappa: f64,
    constraint: &'a StageConstraint,
}

impl<'a> RowBuilder<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        p: &DMatrix<f64>,
        rho: f64,
        dt: f64,
        disturbance: &'a DisturbanceSet,
        basis: &'a BasisSpec,
        scales: Option<&[f64]>,
        d: u32,
        eps: f64,
        constraint: &'a StageConstraint,
    ) -> Result<Self, FunnelError> {
        let l = cholesky_lower(&(p / rho), "P_k / rho_k")?;
        // E[x̄x̄ᵀ] = (2ρ/n) P⁻¹ for x̄ uniform on B_k.
        let n = p.nrows();
        let pinv = l
            .transpose()
            .solve_upper_triangular(&l.solve_lower_triangular(&DMatrix::identity(n, n)).expect("nonsingular"))
            .expect("nonsingular")
            / rho;
        let weights: Vec<f64> = match scales {
            Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
            None => (0..n).map(|j| p[(j, j)] / rho).collect(),
        };
        let mean: f64 = (0..n).map(|j| pinv[(j, j)] * weights[j]).sum::<f64>() * 2.0 * rho / n as f64;
        let kappa = dt / (rho * mean.powi(d as i32));
        Ok(RowBuilder {
            l,
            lu: disturbance.factor(),
            basis,
            weights,
            d,
            eps,
            rho,
            dt,
            kappa,
            constraint,
        })
    }

    pub(crate) fn multiplier(&self, xbar: &[f64]) -> f64 {
        let s: f64 = xbar.iter().zip(&self.weights).map(|(x, w)| x * x * w).sum();
        s.powi(self.d as i32)
    }

    /// `(ñ, a, b)` after row normalization.
    pub(crate) fn row(&self, xbar: &[f64], w: &[f64]) -> (Vec<f64>, f64, f64) {
        let z = self.l.transpose() * DVector::from_row_slice(xbar);
        let v = self.lu.transpose() * DVector::from_row_slice(w);
        let point: Vec<f64> = z.iter().chain(v.iter()).copied().collect();
        let mut nvec = self.basis.evaluate(&point);
        let c = self.multiplier(xbar);
        let mut a = -c * self.rho / self.dt * self.kappa;
        let mut b = (c * self.constraint.eval_rest(xbar, w) - self.eps) * self.kappa;
        let s = a.abs().max(nvec.iter().map(|x| x * x).fold(0.0, f64::max));
        if s > 0.0 {
            a /= s;
            b /= s;
            let r = s.sqrt();
            nvec.iter_mut().for_each(|x| *x /= r);
        }
        (nvec, a, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageResult {
    pub rho_next: f64,
    /// Gram matrix over the full basis.
    pub q: DMatrix<f64>,
    /// Dimension of the basis after reduction modulo the variety.
    pub gram_dim: usize,
    pub rows: usize,
    pub rows_kept: usize,
    pub iterations: usize,
    /// Relative duality gap of the returned SDP iterate.
    pub gap: f64,
    pub max_residual: f64,
    pub q_min_eig: f64,
}

/// Minimizes `ρ_{k+1}` subject to the sampled Gram equalities
/// `(multiplier)·D_k − ε = ñᵀQñ`, `Q ⪰ 0`, and checks the certificate.
pub fn solve_stage_sdp(
    problem: &StageProblem<'_>,
    backend: &dyn SdpBackend,
    options: &SdpOptions,
) -> Result<StageResult, FunnelError> {
    let step = problem.step;
    if problem.batch.pairs.is_empty() {
        return Err(FunnelError::Config(format!("step {step}: empty sample batch")));
    }
    let builder = RowBuilder::new(
        problem.p,
        problem.rho,
        problem.dt,
        problem.disturbance,
        problem.basis,
        problem.scales,
        problem.d,
        problem.eps,
        problem.constraint,
    )?;
    let rows: Vec<(Vec<f64>, f64, f64)> = problem
        .batch
        .pairs
        .iter()
        .map(|(i, w, _)| builder.row(&problem.batch.states[*i], w))
        .collect();
    let reduce = quotient_basis(&rows, problem.basis.len());
    let mut sdp = SdpProblem::new(reduce.ncols());
    sdp.c_scalar = 1.0;
    for (nvec, a, b) in &rows {
        let reduced = reduce.tr_mul(&DVector::from_column_slice(nvec));
        sdp.push(*a, RowMatrix::RankOne(reduced), *b);
    }
    let sol = backend
        .solve(&sdp, options)
        .map_err(|source| FunnelError::Sdp { step, source })?;
    let tau = sol.scalar;
    let q = &reduce * &sol.matrix * reduce.transpose();
    let q_min_eig = min_eigenvalue(&q);
    let max_residual = rows
        .iter()
        .map(|(nvec, a, b)| (a * tau + crate::linalg::quad_form(&q, nvec) - b).abs())
        .fold(0.0, f64::max);
    if max_residual > 1e-6 * tau.abs().max(1.0) {
        return Err(FunnelError::Certificate {
            step,
            reason: format!("equality residual {max_residual:e} exceeds tolerance"),
        });
    }
    if q_min_eig < -1e-7 {
        return Err(FunnelError::Certificate {
            step,
            reason: format!("Gram matrix min eigenvalue {q_min_eig:e}"),
        });
    }
    let rho_next = tau * problem.rho;
    if !(rho_next > 0.0) {
        return Err(FunnelError::Certificate {
            step,
            reason: format!("non-positive rho {rho_next:e}"),
        });
    }
    Ok(StageResult {
        rho_next,
        gram_dim: reduce.ncols(),
        q,
        rows: sdp.rows.len(),
        rows_kept: sol.rows_kept,
        iterations: sol.iterations,
        gap: sol.gap,
        max_residual,
        q_min_eig,
    })
}

/// Relative singular value below which a combination of basis elements is
/// treated as vanishing on the sampled variety.
const QUOTIENT_TOL: f64 = 1e-6;

/// Orthonormal columns spanning the sampled basis vectors.
///
/// Combinations of basis polynomials that vanish on the variety (such as
/// `Σ z_i² − 2`) would otherwise give the Gram matrix a free recession
/// direction; the SDP is solved over the remaining span and lifted back.
fn quotient_basis(rows: &[(Vec<f64>, f64, f64)], len: usize) -> DMatrix<f64> {
    let mut gram = DMatrix::<f64>::zeros(len, len);
    for (n, _, _) in rows {
        let v = DVector::from_column_slice(n);
        gram.ger(1.0, &v, &v, 1.0);
    }
    let eig = symmetrize(&gram).symmetric_eigen();
    let top = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..len)
        .filter(|&i| eig.eigenvalues[i] > QUOTIENT_TOL * QUOTIENT_TOL * top)
        .collect();
    DMatrix::from_fn(len, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageVerification {
    /// `min D_k / (ρ₊/Δt)` over the fresh samples.
    pub min_scaled: f64,
    pub samples: usize,
}

/// Evaluates `D_k` at fresh `(x̄, w)` pairs from `B_k × (∂W ∪ O(x̄))`.
pub fn verify_stage(constraint: &StageConstraint, rho_next: f64, fresh: &SampleBatch) -> StageVerification {
    let scale = constraint.rho_coefficient * rho_next;
    let min = fresh
        .pairs
        .iter()
        .map(|(i, w, _)| constraint.eval(&fresh.states[*i], w, rho_next) / scale)
        .fold(f64::INFINITY, f64::min);
    StageVerification {
        min_scaled: min,
        samples: fresh.pairs.len(),
    }
}
