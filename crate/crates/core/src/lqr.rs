//! Reference trajectories, discrete Jacobians, and time-varying LQR.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{rk4_step, Dynamics, DynamicsError};
use crate::linalg::{min_eigenvalue, symmetrize};
use crate::poly::{Taylor, TaylorSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqrError {
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error("step {step}: {source}")]
    Dynamics { step: usize, source: DynamicsError },
    #[error("step {step}: R + B^T P B is singular")]
    Singular { step: usize },
    #[error("step {step}: value matrix lost positive definiteness (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { step: usize, min_eig: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Nominal states `x*_k` and controls `u*_k` at strictly increasing times.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Length `N` or `N - 1`; the control at the final knot is never used.
    pub controls: Vec<Vec<f64>>,
}

impl ReferenceTrajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, controls: Vec<Vec<f64>>) -> Result<Self, LqrError> {
        let t = ReferenceTrajectory {
            times,
            states,
            controls,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), LqrError> {
        let n = self.times.len();
        let err = |m: String| Err(LqrError::Trajectory(m));
        if n < 2 {
            return err(format!("need at least 2 knots, got {n}"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return err("times not strictly increasing".into());
        }
        if self.states.len() != n {
            return err(format!("{} states for {n} times", self.states.len()));
        }
        if self.controls.len() != n && self.controls.len() != n - 1 {
            return err(format!(
                "{} controls for {n} times (need N or N-1)",
                self.controls.len()
            ));
        }
        let sd = self.states[0].len();
        if sd == 0 || self.states.iter().any(|s| s.len() != sd) {
            return err("inconsistent state dimension".into());
        }
        let cd = self.controls[0].len();
        if self.controls.iter().any(|c| c.len() != cd) {
            return err("inconsistent control dimension".into());
        }
        if self
            .states
            .iter()
            .flatten()
            .chain(self.controls.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return err("non-finite entry".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn control_dim(&self) -> usize {
        self.controls[0].len()
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Control at knot `k`; the last knot reuses the previous control when
    /// only `N - 1` are stored.
    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k.min(self.controls.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// Exact Jacobians `(A_k, B_k)` of the one-step map from knot `k` to `k+1`
/// with respect to state and control, at zero disturbance.
pub fn linearize(
    model: &dyn Dynamics,
    traj: &ReferenceTrajectory,
    k: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>), LqrError> {
    linearize_with(model, traj, k, Integrator::Rk4)
}

pub fn linearize_with(
    model: &dyn Dynamics,
    traj: &ReferenceTrajectory,
    k: usize,
    integrator: Integrator,
) -> Result<(DMatrix<f64>, DMatrix<f64>), LqrError> {
    if k + 1 >= traj.len() {
        return Err(LqrError::Dimension(format!(
            "step {k} out of range for {} knots",
            traj.len()
        )));
    }
    let n = model.state_dim();
    let m = model.control_dim();
    if traj.state_dim() != n || traj.control_dim() != m {
        return Err(LqrError::Dimension(format!(
            "trajectory is {}x{}, model is {n}x{m}",
            traj.state_dim(),
            traj.control_dim()
        )));
    }
    let space = TaylorSpace::new(n + m, 1);
    let x: Vec<Taylor> = (0..n).map(|i| Taylor::variable(&space, i, traj.states[k][i])).collect();
    let u: Vec<Taylor> = (0..m)
        .map(|i| Taylor::variable(&space, n + i, traj.control(k)[i]))
        .collect();
    let w: Vec<Taylor> = (0..model.disturbance_dim())
        .map(|_| Taylor::constant(&space, 0.0))
        .collect();
    let dt = traj.dt(k);
    let f = |s: &[Taylor]| model.eval_taylor(s, &u, &w);
    let next = match integrator {
        Integrator::Rk4 => rk4_step(f, &x, dt),
        Integrator::Euler => f(&x).map(|d| x.iter().zip(d).map(|(a, b)| a.clone() + b * dt).collect()),
    }
    .map_err(|source| LqrError::Dynamics { step: k, source })?;
    let a = DMatrix::from_fn(n, n, |i, j| next[i].first_order(j));
    let b = DMatrix::from_fn(n, m, |i, j| next[i].first_order(n + j));
    Ok((a, b))
}

/// Value matrices and gains from the discrete Riccati recursion.
///
/// Gains follow `u = u* + K x̄`, i.e. `K_k = -(R + BᵀP₊B)⁻¹BᵀP₊A`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCertificate {
    /// `P_1..P_N`.
    pub p: Vec<DMatrix<f64>>,
    /// `K_1..K_{N-1}`.
    pub k: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
}

impl QuadraticCertificate {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `½ x̄ᵀ P_k x̄`.
    pub fn value(&self, k: usize, xbar: &[f64]) -> f64 {
        0.5 * crate::linalg::quad_form(&self.p[k], xbar)
    }
}

pub fn tvlqr_backward(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
) -> Result<QuadraticCertificate, LqrError> {
    if a.len() != b.len() {
        return Err(LqrError::Dimension(format!(
            "{} A matrices, {} B matrices",
            a.len(),
            b.len()
        )));
    }
    let steps = a.len();
    let mut p = vec![symmetrize(qf); steps + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); steps];
    for k in (0..steps).rev() {
        let (ak, bk) = (&a[k], &b[k]);
        let pn = &p[k + 1];
        let pb = pn * bk;
        let s = r + bk.transpose() * &pb;
        let lu = s.clone().lu();
        let rhs = pb.transpose() * ak;
        let kk = lu.solve(&rhs).ok_or(LqrError::Singular { step: k })?;
        let kk = -kk;
        let pk = q + ak.transpose() * pn * (ak + bk * &kk);
        let pk = symmetrize(&pk);
        let me = min_eigenvalue(&pk);
        if !(me > 0.0) {
            return Err(LqrError::NotPositiveDefinite { step: k, min_eig: me });
        }
        p[k] = pk;
        gains[k] = kk;
    }
    Ok(QuadraticCertificate {
        p,
        k: gains,
        q: q.clone(),
        r: r.clone(),
        qf: qf.clone(),
    })
}

/// Linearizes every step (in parallel) and runs the Riccati recursion.
pub fn certificate_for(
    model: &dyn Dynamics,
    traj: &ReferenceTrajectory,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
) -> Result<QuadraticCertificate, LqrError> {
    let jac: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..traj.len() - 1)
        .into_par_iter()
        .map(|k| linearize(model, traj, k))
        .collect::<Result<_, _>>()?;
    let (a, b): (Vec<_>, Vec<_>) = jac.into_iter().unzip();
    tvlqr_backward(&a, &b, q, r, qf)
}
