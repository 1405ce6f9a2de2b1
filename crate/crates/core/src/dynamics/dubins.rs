use super::{check_len, Dynamics, DynamicsError};
use crate::poly::{Scalar, Taylor};

/// `[v cos h, v sin h, u]` for state `(x, y, h)`.
pub fn dubins_derivative(state: &[f64; 3], turn_rate: f64, speed: f64) -> [f64; 3] {
    let h = state[2];
    [speed * h.cos(), speed * h.sin(), turn_rate]
}

/// Dubins car with constant speed and additive rate disturbances on the
/// components selected by `disturbed`.
#[derive(Clone, Debug)]
pub struct Dubins {
    pub speed: f64,
    pub disturbed: [bool; 3],
}

impl Dubins {
    pub fn new(speed: f64, disturbed: [bool; 3]) -> Result<Self, DynamicsError> {
        if !(speed > 0.0) {
            return Err(DynamicsError::Params(format!("speed must be positive, got {speed}")));
        }
        Ok(Dubins { speed, disturbed })
    }

    fn rhs<S: Scalar>(&self, x: &[S], u: &[S], w: &[S]) -> Result<Vec<S>, DynamicsError> {
        check_len("state", 3, x.len())?;
        check_len("control", 1, u.len())?;
        check_len("disturbance", self.disturbance_dim(), w.len())?;
        let h = &x[2];
        let mut out = vec![h.cos() * self.speed, h.sin() * self.speed, u[0].clone()];
        let mut it = w.iter();
        for (i, on) in self.disturbed.iter().enumerate() {
            if *on {
                out[i] = out[i].clone() + it.next().expect("length checked").clone();
            }
        }
        Ok(out)
    }
}

impl Dynamics for Dubins {
    fn name(&self) -> &str {
        "dubins"
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn disturbance_dim(&self) -> usize {
        self.disturbed.iter().filter(|b| **b).count()
    }
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        self.rhs(x, u, w)
    }
    fn eval_taylor(&self, x: &[Taylor], u: &[Taylor], w: &[Taylor]) -> Result<Vec<Taylor>, DynamicsError> {
        self.rhs(x, u, w)
    }
}
