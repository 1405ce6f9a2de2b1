//! Funnel slices `½ x̄ᵀP_k x̄ ≤ ρ_k`, the per-step stage SDP, and the
//! forward and backward sweeps.

mod stage;
mod sweep;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::linalg::{cholesky_lower, generalized_eigenvalues, symmetrize, LinalgError};
use crate::lqr::LqrError;
use crate::poly::BasisKind;
use crate::registry::RegistryError;
use crate::sampling::SamplingError;
use crate::sdp::{SdpError, SdpOptions};

pub use stage::{
    build_stage_constraint, required_basis_degree, solve_stage_sdp, verify_stage, StageConstraint, StageProblem,
    StageResult, StageVerification,
};
pub use sweep::{inspect_stage, run, run_backward, run_forward, FunnelInputs, StageView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunnelError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error("step {step}: {source}")]
    Dynamics { step: usize, source: DynamicsError },
    #[error("step {step}: {source}")]
    Sampling { step: usize, source: SamplingError },
    #[error("step {step}: stage SDP failed: {source}")]
    Sdp { step: usize, source: SdpError },
    #[error("step {step}: certificate check failed: {reason}")]
    Certificate { step: usize, reason: String },
    #[error("step {step}: backward search failed: {reason}")]
    Backward { step: usize, reason: String },
    #[error("time {t} outside [{t0}, {t1}]")]
    OutOfRange { t: f64, t0: f64, t1: f64 },
}

impl FunnelError {
    pub fn step(&self) -> Option<usize> {
        match self {
            FunnelError::Dynamics { step, .. }
            | FunnelError::Sampling { step, .. }
            | FunnelError::Sdp { step, .. }
            | FunnelError::Certificate { step, .. }
            | FunnelError::Backward { step, .. } => Some(*step),
            _ => None,
        }
    }
}

/// A failed sweep: the error plus every slice computed before it.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct SweepFailure {
    pub error: FunnelError,
    pub partial: Option<Box<Funnel>>,
}

impl From<FunnelError> for SweepFailure {
    fn from(error: FunnelError) -> Self {
        SweepFailure { error, partial: None }
    }
}

/// `S_1 = {x̄ | ½ x̄ᵀM₁x̄ ≤ 1}` (also used for backward goal sets).
#[derive(Clone, Debug, PartialEq)]
pub struct InitialSet {
    pub m1: DMatrix<f64>,
}

impl InitialSet {
    pub fn new(m1: DMatrix<f64>) -> Result<Self, FunnelError> {
        cholesky_lower(&m1, "M1")?;
        Ok(InitialSet { m1: symmetrize(&m1) })
    }
}

/// Smallest `ρ₁` with `M₁ - P₁/ρ₁ ⪰ 0`: the largest eigenvalue of the
/// pencil `(P₁, M₁)`.
pub fn initial_rho(set: &InitialSet, p1: &DMatrix<f64>) -> Result<f64, FunnelError> {
    cholesky_lower(p1, "P1")?;
    let ev = generalized_eigenvalues(p1, &set.m1)?;
    Ok(*ev.last().expect("nonempty"))
}

/// Largest `ρ_N` whose slice fits in the goal set: the smallest eigenvalue
/// of the pencil `(P_N, G)`.
pub fn goal_rho(goal: &InitialSet, pn: &DMatrix<f64>) -> Result<f64, FunnelError> {
    cholesky_lower(pn, "P_N")?;
    let ev = generalized_eigenvalues(pn, &goal.m1)?;
    Ok(ev[0])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Exponent of the positive multiplier `(Σ (x̄_j/s_j)²)^d`.
    pub d: u32,
    /// Strictness margin `ε = eps · ρ_k`.
    pub eps: f64,
    pub taylor_degree: u32,
    /// Gram basis degree; `None` picks the smallest consistent one.
    pub basis_degree: Option<u32>,
    pub basis_kind: BasisKind,
    pub samples_multiplier: f64,
    pub backend: String,
    pub state_sampler: String,
    pub mode: Mode,
    pub seed: u64,
    /// Fixed scales `s_j` in the multiplier. By default `s_j² = ρ_k/(P_k)_jj`,
    /// which matches the multiplier to the shape of each slice.
    pub state_scales: Option<Vec<f64>>,
    /// Whether to add critical-set disturbance samples.
    pub critical_samples: bool,
    /// Fresh boundary samples used to re-check each accepted stage.
    pub verify_samples: usize,
    /// Relative tolerance of the backward root search.
    pub backward_tol: f64,
    pub sdp: SdpOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            d: 1,
            eps: 1e-6,
            taylor_degree: 3,
            basis_degree: None,
            basis_kind: BasisKind::Hermite,
            samples_multiplier: 2.0,
            backend: "ipm".into(),
            state_sampler: "rescale".into(),
            mode: Mode::Forward,
            seed: 0,
            state_scales: None,
            critical_samples: true,
            verify_samples: 1000,
            backward_tol: 1e-9,
            sdp: SdpOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), FunnelError> {
        let bad = |m: String| Err(FunnelError::Config(m));
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.taylor_degree == 0 {
            return bad("taylor_degree must be at least 1".into());
        }
        if !(self.samples_multiplier >= 1.0) {
            return bad(format!(
                "samples_multiplier must be >= 1, got {}",
                self.samples_multiplier
            ));
        }
        if let Some(s) = &self.state_scales {
            if s.iter().any(|v| !(*v > 0.0)) {
                return bad("state_scales must be positive".into());
            }
        }
        let need = required_basis_degree(self.d, self.taylor_degree);
        if let Some(b) = self.basis_degree {
            if b < need {
                return bad(format!(
                    "basis degree {b} cannot match equalities of degree {} (d = {}, taylor degree = {}); need at least {need}",
                    2 * self.d + self.taylor_degree.max(1) + 1,
                    self.d,
                    self.taylor_degree
                ));
            }
        }
        Ok(())
    }

    pub fn basis_degree(&self) -> u32 {
        self.basis_degree
            .unwrap_or_else(|| required_basis_degree(self.d, self.taylor_degree))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub step: usize,
    pub samples: usize,
    pub rows: usize,
    pub rows_kept: usize,
    pub sdp_iterations: usize,
    /// `optimal` when the SDP met its tolerance, `feasible` when a feasible
    /// iterate within the acceptance gap was returned instead.
    pub status: String,
    pub sdp_gap: f64,
    pub q_min_eig: f64,
    /// Largest normalized equality residual over all rows.
    pub max_residual: f64,
    /// Smallest `D_k / (ρ_{k+1}/Δt)` over fresh boundary samples, if any were drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh_min: Option<f64>,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunnelDiagnostics {
    pub mode: Mode,
    pub basis_len: usize,
    pub rank: usize,
    pub samples_per_step: usize,
    pub stages: Vec<StageDiagnostics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Funnel {
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    pub p: Vec<DMatrix<f64>>,
    pub x_nominal: Vec<Vec<f64>>,
    pub diagnostics: FunnelDiagnostics,
}

impl Funnel {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.times.len();
        if self.rho.len() != n || self.p.len() != n || self.x_nominal.len() != n {
            return Err("length mismatch between times, rho, P and x_nominal".into());
        }
        if let Some(k) = self.rho.iter().position(|r| !(*r > 0.0)) {
            return Err(format!("rho[{k}] = {} is not positive", self.rho[k]));
        }
        Ok(())
    }

    /// `V_k(x̄)/ρ_k` for a deviation at step `k`.
    pub fn level(&self, k: usize, xbar: &[f64]) -> f64 {
        0.5 * crate::linalg::quad_form(&self.p[k], xbar) / self.rho[k]
    }
}

/// `Σ_k ρ_kⁿ det(P_k)⁻¹`.
pub fn funnel_volume(funnel: &Funnel) -> Result<f64, FunnelError> {
    let mut s = 0.0;
    for (k, (rho, p)) in funnel.rho.iter().zip(&funnel.p).enumerate() {
        let det = p.determinant();
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(FunnelError::Config(format!("P_{k} is singular")));
        }
        s += rho.powi(p.nrows() as i32) / det;
    }
    Ok(s)
}

/// Piecewise-linear `(ρ(t), P(t), x*(t))`.
pub fn interpolate(funnel: &Funnel, t: f64) -> Result<(f64, DMatrix<f64>, Vec<f64>), FunnelError> {
    let times = &funnel.times;
    let (t0, t1) = (times[0], *times.last().expect("nonempty"));
    if !(t >= t0 && t <= t1) {
        return Err(FunnelError::OutOfRange { t, t0, t1 });
    }
    let k = match times.binary_search_by(|v| v.total_cmp(&t)) {
        Ok(k) => return Ok((funnel.rho[k], funnel.p[k].clone(), funnel.x_nominal[k].clone())),
        Err(i) => i - 1,
    };
    let s = (t - times[k]) / (times[k + 1] - times[k]);
    let lerp = |a: f64, b: f64| a + s * (b - a);
    let p = symmetrize(&(&funnel.p[k] * (1.0 - s) + &funnel.p[k + 1] * s));
    let x = funnel.x_nominal[k]
        .iter()
        .zip(&funnel.x_nominal[k + 1])
        .map(|(a, b)| lerp(*a, *b))
        .collect();
    Ok((lerp(funnel.rho[k], funnel.rho[k + 1]), p, x))
}
