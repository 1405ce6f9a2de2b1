//! Built-in scenarios: a Dubins arc and an MSL-like Mars entry.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, AtmosphereModel, Dubins, Dynamics, DynamicsError, EntryModel, EntryParams};
use crate::funnel::SolverConfig;
use crate::lqr::{LqrError, ReferenceTrajectory};
use crate::validation::McSettings;

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub model: Arc<dyn Dynamics>,
    pub traj: ReferenceTrajectory,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub solver: SolverConfig,
    pub mc: McSettings,
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

/// Matrix of the ellipsoid `½ xᵀMx ≤ 1` whose semi-axes are `half_widths`.
pub fn ellipsoid_from_half_widths(half_widths: &[f64]) -> DMatrix<f64> {
    diag(&half_widths.iter().map(|h| 2.0 / (h * h)).collect::<Vec<_>>())
}

/// Open-loop rollout of `controls` from `x0`, one RK4 step per interval.
pub fn rollout_reference(
    model: &dyn Dynamics,
    x0: Vec<f64>,
    times: Vec<f64>,
    controls: Vec<Vec<f64>>,
) -> Result<ReferenceTrajectory, LqrError> {
    let w = vec![0.0; model.disturbance_dim()];
    let mut states = vec![x0];
    for k in 0..times.len() - 1 {
        let next = dynamics::step(model, &states[k], &controls[k], &w, times[k + 1] - times[k])
            .map_err(|source| LqrError::Dynamics { step: k, source })?;
        states.push(next);
    }
    ReferenceTrajectory::new(times, states, controls)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DubinsScenario {
    pub speed: f64,
    pub turn_rate: f64,
    pub steps: usize,
    pub dt: f64,
    /// Bound on the additive heading-rate disturbance.
    pub heading_rate_bound: f64,
    pub initial_half_widths: [f64; 3],
}

impl Default for DubinsScenario {
    fn default() -> Self {
        DubinsScenario {
            speed: 1.0,
            turn_rate: 0.5,
            steps: 60,
            dt: 0.05,
            heading_rate_bound: 0.1,
            initial_half_widths: [0.05, 0.05, 0.05],
        }
    }
}

impl DubinsScenario {
    pub fn build(&self) -> Result<Scenario, DynamicsError> {
        let model = Dubins::new(self.speed, [false, false, true])?;
        let times: Vec<f64> = (0..=self.steps).map(|k| k as f64 * self.dt).collect();
        let controls = vec![vec![self.turn_rate]; times.len()];
        let traj = rollout_reference(&model, vec![0.0; 3], times, controls)
            .map_err(|e| DynamicsError::Params(e.to_string()))?;
        let b = self.heading_rate_bound;
        Ok(Scenario {
            name: "dubins".into(),
            model: Arc::new(model),
            traj,
            q: diag(&[1.0, 1.0, 1.0]).scale(self.dt),
            r: diag(&[1.0]).scale(self.dt),
            qf: diag(&[1.0, 1.0, 1.0]),
            m1: ellipsoid_from_half_widths(&self.initial_half_widths),
            u: ellipsoid_from_half_widths(&[b]),
            solver: SolverConfig::default(),
            mc: McSettings::default(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntryScenario {
    pub params: EntryParams,
    /// `[r, θ, φ, V, γ, ψ]` at the entry interface.
    pub initial_state: [f64; 6],
    pub bank: f64,
    pub steps: usize,
    pub duration: f64,
    pub initial_half_widths: [f64; 6],
    /// Bounds on the log-density offset and slope perturbations.
    pub density_bounds: [f64; 2],
    /// Diagonal of the per-step state weight `Q`; `Q_f = 10 Q`.
    pub state_weight: [f64; 6],
    /// Bank-angle weight `R`. Large enough that `|K x̄|` stays within the
    /// range where the first-order expansion of the lift direction holds.
    pub bank_weight: f64,
}

pub fn msl_like_params() -> EntryParams {
    let mut mask = [false; 8];
    mask[6] = true;
    mask[7] = true;
    EntryParams {
        mu: 4.282837e13,
        planet_radius: 3_396_200.0,
        mass: 2804.0,
        ref_area: 15.9,
        cl: 0.348,
        cd: 1.45,
        bank_is_control: true,
        omega_planet: 0.0,
        atmosphere: AtmosphereModel {
            a0: (0.0158f64).ln() - 40_000.0 / 11_100.0,
            a1: -1.0 / 11_100.0,
            h0: 40_000.0,
        },
        disturbance_mask: mask,
    }
}

impl Default for EntryScenario {
    fn default() -> Self {
        EntryScenario {
            params: msl_like_params(),
            initial_state: [3_396_200.0 + 125_000.0, 0.0, 0.0, 5_900.0, (-15.5f64).to_radians(), 0.0],
            bank: 60f64.to_radians(),
            steps: 100,
            duration: 250.0,
            initial_half_widths: [1_000.0, 1e-4, 1e-4, 10.0, 1e-3, 1e-3],
            density_bounds: [0.1, 2e-6],
            state_weight: [1e-3, 1.0, 1.0, 1e-2, 1.0, 1.0],
            bank_weight: 1e3,
        }
    }
}

impl EntryScenario {
    pub fn build(&self) -> Result<Scenario, DynamicsError> {
        let model = EntryModel::new(self.params.clone())?;
        let dt = self.duration / self.steps as f64;
        let times: Vec<f64> = (0..=self.steps).map(|k| k as f64 * dt).collect();
        let controls = vec![vec![self.bank]; times.len()];
        let traj = rollout_reference(&model, self.initial_state.to_vec(), times, controls)
            .map_err(|e| DynamicsError::Params(e.to_string()))?;
        let solver = SolverConfig {
            taylor_degree: 1,
            ..SolverConfig::default()
        };
        Ok(Scenario {
            name: "entry".into(),
            model: Arc::new(model),
            traj,
            q: diag(&self.state_weight),
            r: diag(&[self.bank_weight]),
            qf: diag(&self.state_weight).scale(10.0),
            m1: ellipsoid_from_half_widths(&self.initial_half_widths),
            u: ellipsoid_from_half_widths(&self.density_bounds),
            solver,
            mc: McSettings::default(),
        })
    }
}
