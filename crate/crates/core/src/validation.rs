//! Monte Carlo dispersion of the closed loop and containment checks
//! against a computed funnel.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, Dynamics};
use crate::funnel::{Funnel, InitialSet};
use crate::linalg::quad_form;
use crate::lqr::{QuadraticCertificate, ReferenceTrajectory};
use crate::registry::{Registry, RegistryError};
use crate::sampling::{sample_disturbance_boundary, sample_state_boundary, stream_rng, DisturbanceSet, SamplingError};

const MC_SALT: u64 = 0x5851_f42d_4c95_7f2d;
/// Boundary candidates scored by the adversarial policy at each step.
const ADVERSARIAL_CANDIDATES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("invalid Monte Carlo settings: {0}")]
    Settings(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// How disturbances evolve along one rollout.
pub trait DisturbancePolicy: Send + Sync {
    fn name(&self) -> &str;

    /// The disturbance applied over step `k`. `held` is the value drawn at
    /// the start of the trajectory; `score` rates a candidate by the
    /// resulting `V_{k+1}`; `sign` is −1 for the antithetic twin.
    fn choose(
        &self,
        set: &DisturbanceSet,
        held: &[f64],
        sign: f64,
        score: &dyn Fn(&[f64]) -> f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64>;
}

/// One interior draw per trajectory, applied at every step.
pub struct Held;

/// A fresh interior draw at every step.
pub struct Resampled;

/// The worst of several `∂W` draws at every step, by next-step `V`.
pub struct Adversarial;

impl DisturbancePolicy for Held {
    fn name(&self) -> &str {
        "held"
    }

    fn choose(
        &self,
        _: &DisturbanceSet,
        held: &[f64],
        _: f64,
        _: &dyn Fn(&[f64]) -> f64,
        _: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        held.to_vec()
    }
}

impl DisturbancePolicy for Resampled {
    fn name(&self) -> &str {
        "resampled"
    }

    fn choose(
        &self,
        set: &DisturbanceSet,
        _: &[f64],
        sign: f64,
        _: &dyn Fn(&[f64]) -> f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        set.sample_interior(rng).into_iter().map(|v| sign * v).collect()
    }
}

impl DisturbancePolicy for Adversarial {
    fn name(&self) -> &str {
        "adversarial"
    }

    fn choose(
        &self,
        set: &DisturbanceSet,
        _: &[f64],
        sign: f64,
        score: &dyn Fn(&[f64]) -> f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<f64> {
        let mut best = (f64::NEG_INFINITY, vec![0.0; set.dim()]);
        for w in sample_disturbance_boundary(set, ADVERSARIAL_CANDIDATES, rng) {
            let w: Vec<f64> = w.into_iter().map(|v| sign * v).collect();
            let s = score(&w);
            if s > best.0 {
                best = (s, w);
            }
        }
        best.1
    }
}

pub fn disturbance_policies() -> Registry<dyn DisturbancePolicy> {
    let mut r: Registry<dyn DisturbancePolicy> = Registry::new("disturbance policy");
    r.register("held", Arc::new(Held));
    r.register("resampled", Arc::new(Resampled));
    r.register("adversarial", Arc::new(Adversarial));
    r
}

/// Where initial deviations are drawn in `S₁`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMode {
    Interior,
    Boundary,
    /// Alternating interior and boundary pairs.
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    pub count: usize,
    pub seed: u64,
    pub policy: String,
    pub initial: InitialMode,
    /// Keep every trajectory's `V_k` series in the report.
    pub keep_values: bool,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            count: 10_000,
            seed: 0,
            policy: "resampled".into(),
            initial: InitialMode::Mixed,
            keep_values: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct McInputs<'a> {
    pub model: Arc<dyn Dynamics>,
    pub traj: &'a ReferenceTrajectory,
    pub cert: &'a QuadraticCertificate,
    pub initial: &'a InitialSet,
    pub disturbance: &'a DisturbanceSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub trajectories: usize,
    pub policy: String,
    pub initial: InitialMode,
    pub times: Vec<f64>,
    /// `ρ̂_k = max_i V_k(x̄⁽ⁱ⁾)`.
    pub rho_mc: Vec<f64>,
    /// `max_i V_k/ρ_k` when levels were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<Vec<f64>>,
    pub violations_per_step: Vec<usize>,
    pub violations: usize,
    /// Trajectories stopped by a dynamics domain error.
    pub domain_failures: usize,
    /// Not serialized, so report files are reproducible.
    #[serde(skip)]
    pub wall_clock_s: f64,
    /// `V_k` series per trajectory, truncated at a domain failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
}

struct Rollout {
    values: Vec<f64>,
    failed: bool,
}

fn interior_scale(n: usize, rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>().powf(1.0 / n as f64)
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    inputs: &McInputs<'_>,
    policy: &dyn DisturbancePolicy,
    x0: &[f64],
    held: &[f64],
    sign: f64,
    rng: &mut ChaCha8Rng,
) -> Rollout {
    let (traj, cert) = (inputs.traj, inputs.cert);
    let model = inputs.model.as_ref();
    let n = x0.len();
    let mut x: Vec<f64> = traj.states[0].iter().zip(x0).map(|(a, b)| a + b).collect();
    let mut values = Vec::with_capacity(traj.len());
    values.push(0.5 * quad_form(&cert.p[0], x0));
    for k in 0..traj.len() - 1 {
        let xbar: Vec<f64> = (0..n).map(|i| x[i] - traj.states[k][i]).collect();
        let gain = &cert.k[k];
        let u: Vec<f64> = (0..gain.nrows())
            .map(|i| traj.control(k)[i] + (0..n).map(|j| gain[(i, j)] * xbar[j]).sum::<f64>())
            .collect();
        let dt = traj.dt(k);
        let advance = |w: &[f64]| dynamics::step(model, &x, &u, w, dt);
        let score = |w: &[f64]| match advance(w) {
            Ok(next) => {
                let d: Vec<f64> = (0..n).map(|i| next[i] - traj.states[k + 1][i]).collect();
                0.5 * quad_form(&cert.p[k + 1], &d)
            }
            Err(_) => f64::INFINITY,
        };
        let w = policy.choose(inputs.disturbance, held, sign, &score, rng);
        match advance(&w) {
            Ok(next) => x = next,
            Err(_) => return Rollout { values, failed: true },
        }
        let d: Vec<f64> = (0..n).map(|i| x[i] - traj.states[k + 1][i]).collect();
        values.push(0.5 * quad_form(&cert.p[k + 1], &d));
    }
    Rollout { values, failed: false }
}

/// Propagates `settings.count` dispersed closed-loop trajectories.
///
/// Trajectories come in antithetic pairs sharing `x̄₀` and a random stream,
/// with the second member's disturbances negated. With `levels`, violations
/// `V_k > ρ_k` are counted per step.
pub fn rollout_dispersed(
    inputs: &McInputs<'_>,
    levels: Option<&[f64]>,
    settings: &McSettings,
) -> Result<McReport, ValidationError> {
    let started = Instant::now();
    let traj = inputs.traj;
    let n = inputs.model.state_dim();
    if settings.count == 0 {
        return Err(ValidationError::Settings("count must be at least 1".into()));
    }
    if inputs.cert.len() != traj.len() || inputs.cert.k.len() + 1 != traj.len() || traj.state_dim() != n {
        return Err(ValidationError::GridMismatch(
            "certificate and trajectory disagree".into(),
        ));
    }
    if inputs.initial.m1.nrows() != n || inputs.disturbance.dim() != inputs.model.disturbance_dim() {
        return Err(ValidationError::Settings(
            "initial or disturbance set has the wrong dimension".into(),
        ));
    }
    if let Some(l) = levels {
        if l.len() != traj.len() {
            return Err(ValidationError::GridMismatch(format!(
                "{} levels for {} knots",
                l.len(),
                traj.len()
            )));
        }
    }
    let policy = disturbance_policies().get(&settings.policy)?;
    let m1 = &inputs.initial.m1;
    // Probes the dimensions once so per-trajectory draws cannot fail.
    sample_state_boundary(m1, 1.0, 0, &mut stream_rng(0, 0, 0))?;

    let pairs = settings.count.div_ceil(2);
    let seed = settings.seed ^ MC_SALT;
    let runs: Vec<Rollout> = (0..pairs)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut rng = stream_rng(seed, j, 0);
            let mut x0 = sample_state_boundary(m1, 1.0, 1, &mut rng).expect("checked").remove(0);
            let interior = match settings.initial {
                InitialMode::Interior => true,
                InitialMode::Boundary => false,
                InitialMode::Mixed => j % 2 == 0,
            };
            if interior {
                let s = interior_scale(n, &mut rng);
                x0.iter_mut().for_each(|v| *v *= s);
            }
            let held = inputs.disturbance.sample_interior(&mut rng);
            let twin = rng.clone();
            let members = if 2 * j + 1 < settings.count { 2 } else { 1 };
            let policy = policy.as_ref();
            (0..members)
                .map(|m| {
                    let mut r = twin.clone();
                    let sign = if m == 0 { 1.0 } else { -1.0 };
                    let h: Vec<f64> = held.iter().map(|v| sign * v).collect();
                    rollout(inputs, policy, &x0, &h, sign, &mut r)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let steps = traj.len();
    let mut rho_mc = vec![0.0f64; steps];
    let mut max_ratio = levels.map(|_| vec![0.0f64; steps]);
    let mut violations_per_step = vec![0usize; steps];
    let mut domain_failures = 0;
    for run in &runs {
        domain_failures += run.failed as usize;
        for (k, &v) in run.values.iter().enumerate() {
            rho_mc[k] = rho_mc[k].max(v);
            if let (Some(l), Some(r)) = (levels, max_ratio.as_mut()) {
                r[k] = r[k].max(v / l[k]);
                violations_per_step[k] += (v > l[k]) as usize;
            }
        }
    }
    Ok(McReport {
        trajectories: runs.len(),
        policy: policy.name().to_string(),
        initial: settings.initial,
        times: traj.times.clone(),
        rho_mc,
        max_ratio,
        violations: violations_per_step.iter().sum(),
        violations_per_step,
        domain_failures,
        wall_clock_s: started.elapsed().as_secs_f64(),
        values: settings
            .keep_values
            .then(|| runs.into_iter().map(|r| r.values).collect()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Containment {
    pub pass: bool,
    /// `max_k ρ̂_k/ρ_k`.
    pub worst_margin: f64,
    pub worst_step: usize,
    /// Steps with `ρ̂_k > ρ_k`.
    pub violating_steps: usize,
}

/// Passes iff no sampled `V_k` exceeds the funnel's `ρ_k`.
pub fn containment_check(funnel: &Funnel, report: &McReport) -> Result<Containment, ValidationError> {
    if funnel.times.len() != report.times.len() {
        return Err(ValidationError::GridMismatch(format!(
            "funnel has {} steps, report has {}",
            funnel.times.len(),
            report.times.len()
        )));
    }
    if let Some(k) = (0..funnel.times.len()).find(|&k| funnel.times[k] != report.times[k]) {
        return Err(ValidationError::GridMismatch(format!(
            "step {k}: funnel time {} vs report time {}",
            funnel.times[k], report.times[k]
        )));
    }
    let mut worst = (0.0f64, 0usize);
    let mut violating_steps = 0;
    for (k, (&r, &mc)) in funnel.rho.iter().zip(&report.rho_mc).enumerate() {
        let m = mc / r;
        if m > worst.0 {
            worst = (m, k);
        }
        violating_steps += (mc > r) as usize;
    }
    Ok(Containment {
        pass: violating_steps == 0,
        worst_margin: worst.0,
        worst_step: worst.1,
        violating_steps,
    })
}

/// Scales every `ρ_k` by `factor` (used to construct failing checks).
pub fn scaled_funnel(funnel: &Funnel, factor: f64) -> Funnel {
    Funnel {
        rho: funnel.rho.iter().map(|r| r * factor).collect(),
        ..funnel.clone()
    }
}
