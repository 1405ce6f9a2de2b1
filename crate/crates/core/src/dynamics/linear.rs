use nalgebra::DMatrix;

use super::{check_len, Dynamics, DynamicsError};
use crate::poly::{Scalar, Taylor};

/// `ẋ = A x + B u + E w`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DMatrix<f64>) -> Result<Self, DynamicsError> {
        let n = a.nrows();
        check_len("A columns", n, a.ncols())?;
        check_len("B rows", n, b.nrows())?;
        check_len("E rows", n, e.nrows())?;
        Ok(LinearSystem { a, b, e })
    }

    fn rhs<S: Scalar>(&self, x: &[S], u: &[S], w: &[S]) -> Result<Vec<S>, DynamicsError> {
        check_len("state", self.a.nrows(), x.len())?;
        check_len("control", self.b.ncols(), u.len())?;
        check_len("disturbance", self.e.ncols(), w.len())?;
        let zero = x[0].lift(0.0);
        Ok((0..x.len())
            .map(|i| {
                let mut acc = zero.clone();
                for (j, xj) in x.iter().enumerate() {
                    acc = acc + xj.clone() * self.a[(i, j)];
                }
                for (j, uj) in u.iter().enumerate() {
                    acc = acc + uj.clone() * self.b[(i, j)];
                }
                for (j, wj) in w.iter().enumerate() {
                    acc = acc + wj.clone() * self.e[(i, j)];
                }
                acc
            })
            .collect())
    }
}

impl Dynamics for LinearSystem {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        self.rhs(x, u, w)
    }
    fn eval_taylor(&self, x: &[Taylor], u: &[Taylor], w: &[Taylor]) -> Result<Vec<Taylor>, DynamicsError> {
        self.rhs(x, u, w)
    }
}
