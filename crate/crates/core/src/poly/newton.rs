use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::MultiPoly;

const MAX_HALVINGS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum NewtonError {
    #[error("system has {equations} equations in {unknowns} unknowns; need equations <= unknowns")]
    Overdetermined { equations: usize, unknowns: usize },
    #[error("initial guess has {got} entries, system has {expected} unknowns")]
    BadGuess { expected: usize, got: usize },
    #[error("singular jacobian at iteration {iteration} (residual {residual:e})")]
    SingularJacobian { iteration: usize, residual: f64 },
    #[error("line search failed to decrease residual {residual:e} at iteration {iteration}")]
    LineSearch { iteration: usize, residual: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
}

/// Options bundle for callers that thread Newton settings through config.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

fn residual(system: &[MultiPoly], x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(system.len(), system.iter().map(|p| p.eval_unchecked(x)))
}

/// Damped Newton iteration for `system(x) = 0`.
///
/// Square systems take the full Newton step; under-determined systems take
/// the least-norm step `-J^T (J J^T)^-1 F`. Each step is halved up to 20
/// times until the residual 2-norm decreases. On success the infinity norm
/// of the residual is at most `tol`.
pub fn newton_solve(system: &[MultiPoly], guess: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, NewtonError> {
    let m = system.len();
    let n = guess.len();
    if let Some(p) = system.iter().find(|p| p.nvars() != n) {
        return Err(NewtonError::BadGuess {
            expected: p.nvars(),
            got: n,
        });
    }
    if m > n {
        return Err(NewtonError::Overdetermined {
            equations: m,
            unknowns: n,
        });
    }
    let vars: Vec<usize> = (0..n).collect();
    let jac_polys: Vec<Vec<MultiPoly>> = system
        .iter()
        .map(|p| p.grad(&vars).expect("variables in range"))
        .collect();

    let mut x = guess.to_vec();
    let mut f = residual(system, &x);
    for iteration in 0..max_iter {
        let res_inf = f.amax();
        if res_inf <= tol {
            return Ok(x);
        }
        let jac = DMatrix::from_fn(m, n, |i, j| jac_polys[i][j].eval_unchecked(&x));
        let step = if m == n {
            jac.clone().lu().solve(&(-&f))
        } else {
            let jjt = &jac * jac.transpose();
            jjt.cholesky().map(|c| -(jac.transpose() * c.solve(&f)))
        };
        let step = match step {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                return Err(NewtonError::SingularJacobian {
                    iteration,
                    residual: res_inf,
                })
            }
        };
        let f_norm = f.norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + alpha * s).collect();
            let ft = residual(system, &trial);
            if ft.norm() < f_norm {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xt, ft)) => {
                x = xt;
                f = ft;
            }
            None => {
                // Rounding floor: the residual cannot decrease further.
                if res_inf <= tol {
                    return Ok(x);
                }
                return Err(NewtonError::LineSearch {
                    iteration,
                    residual: res_inf,
                });
            }
        }
    }
    let res_inf = f.amax();
    if res_inf <= tol {
        Ok(x)
    } else {
        Err(NewtonError::MaxIterations {
            iterations: max_iter,
            residual: res_inf,
        })
    }
}
