//! Continuous-time models, RK4, and the closed-loop deviation dynamics.
//!
//! Every model implements [`Dynamics`] for both `f64` and [`Taylor`]
//! arguments, so the same code path yields plain derivatives, exact
//! integrator Jacobians, and the polynomial expansion used by the funnel
//! solver.

mod dubins;
mod entry;
mod linear;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::{MultiPoly, Scalar, Taylor, TaylorSpace};

pub use dubins::{dubins_derivative, Dubins};
pub use entry::{vinh_derivative, AtmosphereModel, CoriolisTerms, EntryModel, EntryParams, ENTRY_DISTURBANCE_DIM};
pub use linear::LinearSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("domain error: denominator {denominator} is {value:e}")]
    Domain { denominator: &'static str, value: f64 },
    #[error("non-finite derivative in component {component}")]
    NonFinite { component: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameters: {0}")]
    Params(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), DynamicsError> {
    if expected != got {
        return Err(DynamicsError::Dimension { what, expected, got });
    }
    Ok(())
}

/// `ẋ = f(x, u, w)` with `w` the active disturbance vector.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, DynamicsError>;
    fn eval_taylor(&self, x: &[Taylor], u: &[Taylor], w: &[Taylor]) -> Result<Vec<Taylor>, DynamicsError>;
}

/// Classic fourth-order Runge–Kutta step with `u` and `w` held constant.
pub fn rk4_step<S: Scalar>(
    f: impl Fn(&[S]) -> Result<Vec<S>, DynamicsError>,
    x: &[S],
    dt: f64,
) -> Result<Vec<S>, DynamicsError> {
    let axpy =
        |a: &[S], k: &[S], h: f64| -> Vec<S> { a.iter().zip(k).map(|(ai, ki)| ai.clone() + ki.clone() * h).collect() };
    let k1 = f(x)?;
    let k2 = f(&axpy(x, &k1, dt / 2.0))?;
    let k3 = f(&axpy(x, &k2, dt / 2.0))?;
    let k4 = f(&axpy(x, &k3, dt))?;
    Ok((0..x.len())
        .map(|i| {
            x[i].clone() + (k1[i].clone() + k2[i].clone() * 2.0 + k3[i].clone() * 2.0 + k4[i].clone()) * (dt / 6.0)
        })
        .collect())
}

/// One RK4 step of the open-loop model.
pub fn step(model: &dyn Dynamics, x: &[f64], u: &[f64], w: &[f64], dt: f64) -> Result<Vec<f64>, DynamicsError> {
    let out = rk4_step(|s: &[f64]| model.eval(s, u, w), x, dt)?;
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite { component: i });
    }
    Ok(out)
}

/// Closed-loop dynamics around one nominal point:
/// `f(x* + x̄, u* + K x̄, w) - f(x*, u*, 0)`.
#[derive(Clone, Debug)]
pub struct ClosedLoopModel {
    pub dynamics: Arc<dyn Dynamics>,
    pub x_nominal: Vec<f64>,
    pub u_nominal: Vec<f64>,
    /// Feedback gain, `control_dim x state_dim`, applied as `u = u* + K x̄`.
    pub gain: DMatrix<f64>,
}

impl ClosedLoopModel {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        x_nominal: Vec<f64>,
        u_nominal: Vec<f64>,
        gain: DMatrix<f64>,
    ) -> Result<Self, DynamicsError> {
        let (n, m) = (dynamics.state_dim(), dynamics.control_dim());
        check_len("nominal state", n, x_nominal.len())?;
        check_len("nominal control", m, u_nominal.len())?;
        check_len("gain rows", m, gain.nrows())?;
        check_len("gain columns", n, gain.ncols())?;
        Ok(ClosedLoopModel {
            dynamics,
            x_nominal,
            u_nominal,
            gain,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.dynamics.disturbance_dim()
    }

    pub fn control(&self, xbar: &[f64]) -> Vec<f64> {
        (0..self.u_nominal.len())
            .map(|i| self.u_nominal[i] + (0..xbar.len()).map(|j| self.gain[(i, j)] * xbar[j]).sum::<f64>())
            .collect()
    }

    pub fn nominal_derivative(&self) -> Result<Vec<f64>, DynamicsError> {
        let w0 = vec![0.0; self.disturbance_dim()];
        self.dynamics.eval(&self.x_nominal, &self.u_nominal, &w0)
    }

    pub fn closed_loop_deviation(&self, xbar: &[f64], w: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        check_len("deviation", self.state_dim(), xbar.len())?;
        check_len("disturbance", self.disturbance_dim(), w.len())?;
        let x: Vec<f64> = self.x_nominal.iter().zip(xbar).map(|(a, b)| a + b).collect();
        let u = self.control(xbar);
        let f = self.dynamics.eval(&x, &u, w)?;
        let f0 = self.nominal_derivative()?;
        Ok(f.iter().zip(&f0).map(|(a, b)| a - b).collect())
    }

    /// Taylor expansion of [`Self::closed_loop_deviation`] about `(0, 0)`
    /// truncated at total degree `degree`. Variables are `x̄` followed by `w`.
    pub fn polynomialize(&self, degree: u32) -> Result<Vec<MultiPoly>, DynamicsError> {
        if degree == 0 {
            return Err(DynamicsError::Params("expansion degree must be at least 1".into()));
        }
        let n = self.state_dim();
        let p = self.disturbance_dim();
        let space = TaylorSpace::new(n + p, degree);
        let x: Vec<Taylor> = (0..n).map(|i| Taylor::variable(&space, i, self.x_nominal[i])).collect();
        let u: Vec<Taylor> = (0..self.u_nominal.len())
            .map(|i| {
                let mut ui = Taylor::constant(&space, self.u_nominal[i]);
                for j in 0..n {
                    let k = self.gain[(i, j)];
                    if k != 0.0 {
                        ui = ui + Taylor::variable(&space, j, 0.0) * k;
                    }
                }
                ui
            })
            .collect();
        let w: Vec<Taylor> = (0..p).map(|j| Taylor::variable(&space, n + j, 0.0)).collect();
        let f = self.dynamics.eval_taylor(&x, &u, &w)?;
        Ok(f.iter()
            .map(|fi| {
                let mut poly = fi.to_poly();
                let zero = crate::poly::Monomial::one(n + p);
                let c = poly.coefficient(&zero);
                poly.add_term(zero, -c);
                poly
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_is_exact_for_cubic_time_polynomials() {
        // ẋ = t^3 written autonomously as (x, t)
        let f = |s: &[f64]| Ok(vec![s[1].powi(3), 1.0]);
        let out = rk4_step(f, &[0.0, 0.0], 0.7).unwrap();
        assert!((out[0] - 0.7f64.powi(4) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn linear_closed_loop_is_a_plus_bk() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys = Arc::new(LinearSystem::new(a.clone(), b.clone(), DMatrix::zeros(2, 0)).unwrap());
        let k = DMatrix::from_row_slice(1, 2, &[-1.0, -0.5]);
        let cl = ClosedLoopModel::new(sys, vec![0.3, -0.1], vec![0.2], k.clone()).unwrap();
        let xbar = [0.4, -0.7];
        let got = cl.closed_loop_deviation(&xbar, &[]).unwrap();
        let want = (&a + &b * &k) * nalgebra::DVector::from_row_slice(&xbar);
        for i in 0..2 {
            assert!((got[i] - want[i]).abs() < 1e-15);
        }
        assert_eq!(cl.closed_loop_deviation(&[0.0, 0.0], &[]).unwrap(), vec![0.0, 0.0]);
    }
}
