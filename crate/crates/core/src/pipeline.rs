//! A scenario with its TVLQR certificate and sets, ready for funnel sweeps
//! and Monte Carlo checks.

use nalgebra::DMatrix;

use crate::funnel::{run_backward, run_forward, Funnel, FunnelError, FunnelInputs, InitialSet, Mode, SweepFailure};
use crate::lqr::{certificate_for, QuadraticCertificate};
use crate::sampling::DisturbanceSet;
use crate::scenarios::Scenario;
use crate::validation::{
    containment_check, rollout_dispersed, Containment, McInputs, McReport, McSettings, ValidationError,
};

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub scenario: Scenario,
    pub cert: QuadraticCertificate,
    pub disturbance: DisturbanceSet,
    pub initial: InitialSet,
}

impl Pipeline {
    pub fn new(scenario: Scenario) -> Result<Self, FunnelError> {
        let cert = certificate_for(
            scenario.model.as_ref(),
            &scenario.traj,
            &scenario.q,
            &scenario.r,
            &scenario.qf,
        )?;
        let disturbance = if scenario.u.nrows() == 0 {
            DisturbanceSet::empty()
        } else {
            DisturbanceSet::new(scenario.u.clone())
                .map_err(|e| FunnelError::Config(format!("disturbance bound: {e}")))?
        };
        let initial = InitialSet::new(scenario.m1.clone())?;
        Ok(Pipeline {
            scenario,
            cert,
            disturbance,
            initial,
        })
    }

    pub fn inputs(&self) -> FunnelInputs<'_> {
        FunnelInputs {
            model: self.scenario.model.clone(),
            traj: &self.scenario.traj,
            cert: &self.cert,
            disturbance: &self.disturbance,
            config: &self.scenario.solver,
        }
    }

    pub fn forward(&self) -> Result<Funnel, SweepFailure> {
        run_forward(&self.inputs(), &self.initial)
    }

    pub fn backward(&self, goal: &DMatrix<f64>) -> Result<Funnel, SweepFailure> {
        run_backward(&self.inputs(), &InitialSet::new(goal.clone())?)
    }

    /// Runs the sweep selected by the solver mode; `goal` is used backward.
    pub fn sweep(&self, goal: &DMatrix<f64>) -> Result<Funnel, SweepFailure> {
        match self.scenario.solver.mode {
            Mode::Forward => self.forward(),
            Mode::Backward => self.backward(goal),
        }
    }

    /// Dispersed rollouts against `funnel` and the resulting containment.
    pub fn monte_carlo(
        &self,
        funnel: &Funnel,
        settings: &McSettings,
    ) -> Result<(McReport, Containment), ValidationError> {
        if funnel.times != self.scenario.traj.times {
            return Err(ValidationError::GridMismatch(format!(
                "funnel has {} knots, trajectory has {}",
                funnel.len(),
                self.scenario.traj.len()
            )));
        }
        let inputs = McInputs {
            model: self.scenario.model.clone(),
            traj: &self.scenario.traj,
            cert: &self.cert,
            initial: &self.initial,
            disturbance: &self.disturbance,
        };
        let report = rollout_dispersed(&inputs, Some(&funnel.rho), settings)?;
        let containment = containment_check(funnel, &report)?;
        Ok((report, containment))
    }
}
