use std::sync::Arc;

use log::{debug, info};

use super::stage::RowBuilder;
use super::{
    build_stage_constraint, goal_rho, initial_rho, solve_stage_sdp, verify_stage, Funnel, FunnelDiagnostics,
    FunnelError, InitialSet, Mode, SolverConfig, StageConstraint, StageDiagnostics, StageProblem, StageResult,
    SweepFailure,
};
use crate::dynamics::{ClosedLoopModel, Dynamics};
use crate::lqr::{QuadraticCertificate, ReferenceTrajectory};
use crate::poly::{BasisSpec, MultiPoly};
use crate::sampling::{
    draw_batch, estimate_min_samples, par_draw, sample_disturbance_boundary, state_samplers, DisturbanceSet,
    SampleBatch, SamplingError, StateSampler,
};
use crate::sdp::{backends, SdpBackend};

const PROBE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const VERIFY_SALT: u64 = 0xc2b2_ae3d_27d4_eb4f;
/// Fresh-sample positivity threshold, relative to `ρ_{k+1}/Δt`.
pub(crate) const FRESH_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct FunnelInputs<'a> {
    pub model: Arc<dyn Dynamics>,
    pub traj: &'a ReferenceTrajectory,
    pub cert: &'a QuadraticCertificate,
    pub disturbance: &'a DisturbanceSet,
    pub config: &'a SolverConfig,
}

struct Context<'a> {
    inputs: &'a FunnelInputs<'a>,
    backend: Arc<dyn SdpBackend>,
    sampler: Arc<dyn StateSampler>,
    basis: BasisSpec,
    scales: Option<Vec<f64>>,
}

/// Per-step data that does not depend on `ρ_k`.
struct StepData {
    dynamics: Vec<MultiPoly>,
    constraint: StageConstraint,
    dt: f64,
}

impl<'a> Context<'a> {
    fn new(inputs: &'a FunnelInputs<'a>) -> Result<Self, FunnelError> {
        let cfg = inputs.config;
        cfg.validate()?;
        let model = &inputs.model;
        let n = model.state_dim();
        let (traj, cert) = (inputs.traj, inputs.cert);
        if traj.state_dim() != n || cert.len() != traj.len() || cert.k.len() + 1 != traj.len() {
            return Err(FunnelError::Config(format!(
                "trajectory ({} knots, {} states), certificate ({} slices) and model ({n} states) disagree",
                traj.len(),
                traj.state_dim(),
                cert.len()
            )));
        }
        if inputs.disturbance.dim() != model.disturbance_dim() {
            return Err(FunnelError::Config(format!(
                "disturbance bound is {}-dimensional, model has {} disturbances",
                inputs.disturbance.dim(),
                model.disturbance_dim()
            )));
        }
        let scales = cfg.state_scales.clone();
        if let Some(s) = scales.as_ref().filter(|s| s.len() != n) {
            return Err(FunnelError::Config(format!("{} state scales for {n} states", s.len())));
        }
        let basis = BasisSpec::new(n + model.disturbance_dim(), cfg.basis_degree(), cfg.basis_kind);
        Ok(Context {
            inputs,
            backend: backends().get(&cfg.backend)?,
            sampler: state_samplers().get(&cfg.state_sampler)?,
            basis,
            scales,
        })
    }

    fn step_data(&self, k: usize) -> Result<StepData, FunnelError> {
        let (traj, cert) = (self.inputs.traj, self.inputs.cert);
        let cl = ClosedLoopModel::new(
            Arc::clone(&self.inputs.model),
            traj.states[k].clone(),
            traj.control(k).to_vec(),
            cert.k[k].clone(),
        )
        .map_err(|source| FunnelError::Dynamics { step: k, source })?;
        let dynamics = cl
            .polynomialize(self.inputs.config.taylor_degree)
            .map_err(|source| FunnelError::Dynamics { step: k, source })?;
        let dt = traj.dt(k);
        let constraint = build_stage_constraint(&cert.p[k], &cert.p[k + 1], dt, &dynamics)?;
        Ok(StepData {
            dynamics,
            constraint,
            dt,
        })
    }

    fn critical<'b>(&self, data: &'b StepData) -> Option<&'b [MultiPoly]> {
        self.inputs.config.critical_samples.then_some(data.dynamics.as_slice())
    }

    fn eps(&self, rho: f64) -> f64 {
        self.inputs.config.eps * rho
    }

    /// Rank-saturating sample count at step `k` and level `rho`.
    fn sample_count(&self, k: usize, data: &StepData, rho: f64) -> Result<(usize, usize), FunnelError> {
        let cfg = self.inputs.config;
        let p = &self.inputs.cert.p[k];
        let builder = RowBuilder::new(
            p,
            rho,
            data.dt,
            self.inputs.disturbance,
            &self.basis,
            self.scales.as_deref(),
            cfg.d,
            self.eps(rho),
            &data.constraint,
        )?;
        // Probe draws come in blocks so the sequence is reproducible.
        let seed = cfg.seed ^ PROBE_SALT;
        let mut block = 0usize;
        let mut queue: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let set = self.inputs.disturbance;
        let sampler = &self.sampler;
        let mut probe = || {
            if queue.is_empty() {
                let drawn: Vec<Result<_, SamplingError>> = par_draw(seed, block, 256, |rng| {
                    let x = sampler.sample(p, rho, rng)?;
                    let w = sample_disturbance_boundary(set, 1, rng).pop().unwrap_or_default();
                    Ok((x, w))
                });
                block += 1;
                queue = drawn.into_iter().rev().collect::<Result<_, _>>()?;
            }
            let (x, w) = queue.pop().expect("refilled");
            let (n, a, _) = builder.row(&x, &w);
            Ok((n, a))
        };
        let est = estimate_min_samples(self.basis.len(), &mut probe)
            .map_err(|source| FunnelError::Sampling { step: k, source })?;
        let count = (cfg.samples_multiplier * est.count as f64).ceil() as usize;
        info!(
            "rank saturates at {} samples (rank {}, basis {}); using {count} per step",
            est.count,
            est.rank,
            self.basis.len()
        );
        Ok((count.max(1), est.rank))
    }

    fn batch(&self, k: usize, data: &StepData, rho: f64, count: usize, salt: u64) -> Result<SampleBatch, FunnelError> {
        draw_batch(
            k,
            self.inputs.config.seed ^ salt,
            self.sampler.as_ref(),
            &self.inputs.cert.p[k],
            rho,
            self.inputs.disturbance,
            self.critical(data),
            count,
        )
        .map_err(|source| FunnelError::Sampling { step: k, source })
    }

    /// Solves stage `k` at level `rho`.
    fn stage(&self, k: usize, data: &StepData, rho: f64, count: usize) -> Result<(StageResult, usize), FunnelError> {
        let batch = self.batch(k, data, rho, count, 0)?;
        let problem = StageProblem {
            step: k,
            dt: data.dt,
            rho,
            p: &self.inputs.cert.p[k],
            constraint: &data.constraint,
            batch: &batch,
            basis: &self.basis,
            d: self.inputs.config.d,
            eps: self.eps(rho),
            scales: self.scales.as_deref(),
            disturbance: self.inputs.disturbance,
        };
        let res = solve_stage_sdp(&problem, self.backend.as_ref(), &self.inputs.config.sdp)?;
        Ok((res, batch.states.len()))
    }

    /// Re-checks `D_k ≥ 0` at fresh samples and records diagnostics.
    fn certify(
        &self,
        k: usize,
        data: &StepData,
        rho: f64,
        res: &StageResult,
        samples: usize,
    ) -> Result<StageDiagnostics, FunnelError> {
        let cfg = self.inputs.config;
        let fresh_min = if cfg.verify_samples > 0 {
            let fresh = self.batch(k, data, rho, cfg.verify_samples, VERIFY_SALT)?;
            Some(verify_stage(&data.constraint, res.rho_next, &fresh).min_scaled)
        } else {
            None
        };
        if let Some(fresh_min) = fresh_min.filter(|m| *m < -FRESH_TOL) {
            return Err(FunnelError::Certificate {
                step: k,
                reason: format!("D_k = {fresh_min:e} (relative) at a fresh boundary sample"),
            });
        }
        debug!(
            "step {k}: rho {rho:.6e} -> {:.6e}, rows {}/{}, iters {}, fresh min {fresh_min:?}",
            res.rho_next, res.rows_kept, res.rows, res.iterations
        );
        Ok(StageDiagnostics {
            step: k,
            samples,
            rows: res.rows,
            rows_kept: res.rows_kept,
            sdp_iterations: res.iterations,
            status: if res.gap <= cfg.sdp.tol { "optimal" } else { "feasible" }.into(),
            sdp_gap: res.gap,
            q_min_eig: res.q_min_eig,
            max_residual: res.max_residual,
            fresh_min,
            eps: self.eps(rho),
        })
    }

    fn funnel(&self, rho: Vec<f64>, offset: usize, diagnostics: FunnelDiagnostics) -> Funnel {
        let len = rho.len();
        let r = offset..offset + len;
        Funnel {
            times: self.inputs.traj.times[r.clone()].to_vec(),
            p: self.inputs.cert.p[r.clone()].to_vec(),
            x_nominal: self.inputs.traj.states[r].to_vec(),
            rho,
            diagnostics,
        }
    }
}

fn diagnostics(
    mode: Mode,
    basis_len: usize,
    rank: usize,
    count: usize,
    stages: Vec<StageDiagnostics>,
) -> FunnelDiagnostics {
    FunnelDiagnostics {
        mode,
        basis_len,
        rank,
        samples_per_step: count,
        stages,
    }
}

/// Dispatches on `config.mode`; `set` is `S₁` (forward) or the goal set.
pub fn run(inputs: &FunnelInputs<'_>, set: &InitialSet) -> Result<Funnel, SweepFailure> {
    match inputs.config.mode {
        Mode::Forward => run_forward(inputs, set),
        Mode::Backward => run_backward(inputs, set),
    }
}

/// Greedy forward sweep: `ρ₁` from the initial set, then the smallest
/// certified `ρ_{k+1}` at each step.
pub fn run_forward(inputs: &FunnelInputs<'_>, m1: &InitialSet) -> Result<Funnel, SweepFailure> {
    let ctx = Context::new(inputs)?;
    let n_knots = inputs.traj.len();
    let mut rho = vec![initial_rho(m1, &inputs.cert.p[0])?];
    let mut stages = Vec::new();
    let mut count = 0;
    let mut rank = 0;
    for k in 0..n_knots - 1 {
        let outcome = (|| {
            let data = ctx.step_data(k)?;
            if k == 0 {
                (count, rank) = ctx.sample_count(k, &data, rho[0])?;
            }
            let (res, samples) = ctx.stage(k, &data, rho[k], count)?;
            let diag = ctx.certify(k, &data, rho[k], &res, samples)?;
            Ok::<_, FunnelError>((res.rho_next, diag))
        })();
        match outcome {
            Ok((next, diag)) => {
                rho.push(next);
                stages.push(diag);
            }
            Err(error) => {
                let partial = ctx.funnel(rho, 0, diagnostics(Mode::Forward, ctx.basis.len(), rank, count, stages));
                return Err(SweepFailure {
                    error,
                    partial: Some(Box::new(partial)),
                });
            }
        }
    }
    Ok(ctx.funnel(rho, 0, diagnostics(Mode::Forward, ctx.basis.len(), rank, count, stages)))
}

/// Backward sweep from the goal set: at each step the largest `ρ_k` whose
/// forward stage certificate reaches `ρ_{k+1}`.
pub fn run_backward(inputs: &FunnelInputs<'_>, goal: &InitialSet) -> Result<Funnel, SweepFailure> {
    let ctx = Context::new(inputs)?;
    let n_knots = inputs.traj.len();
    let mut rho_rev = vec![goal_rho(goal, &inputs.cert.p[n_knots - 1])?];
    let mut stages_rev = Vec::new();
    let mut count = 0;
    let mut rank = 0;
    for k in (0..n_knots - 1).rev() {
        let target = *rho_rev.last().expect("nonempty");
        let outcome = (|| {
            let data = ctx.step_data(k)?;
            if k == n_knots - 2 {
                (count, rank) = ctx.sample_count(k, &data, target)?;
            }
            let (rho_k, res, samples) = backward_step(&ctx, k, &data, target, count)?;
            let diag = ctx.certify(k, &data, rho_k, &res, samples)?;
            Ok::<_, FunnelError>((rho_k, diag))
        })();
        match outcome {
            Ok((rho_k, diag)) => {
                rho_rev.push(rho_k);
                stages_rev.push(diag);
            }
            Err(error) => {
                let len = rho_rev.len();
                rho_rev.reverse();
                stages_rev.reverse();
                let partial = ctx.funnel(
                    rho_rev,
                    n_knots - len,
                    diagnostics(Mode::Backward, ctx.basis.len(), rank, count, stages_rev),
                );
                return Err(SweepFailure {
                    error,
                    partial: Some(Box::new(partial)),
                });
            }
        }
    }
    rho_rev.reverse();
    stages_rev.reverse();
    Ok(ctx.funnel(
        rho_rev,
        0,
        diagnostics(Mode::Backward, ctx.basis.len(), rank, count, stages_rev),
    ))
}

/// Largest `ρ_k` with `φ(ρ_k) ≤ target`, where `φ` is the forward stage
/// optimum. Brackets by doubling/halving, then refines with the Illinois
/// method, always returning the feasible end of the bracket.
fn backward_step(
    ctx: &Context<'_>,
    k: usize,
    data: &StepData,
    target: f64,
    count: usize,
) -> Result<(f64, StageResult, usize), FunnelError> {
    let tol = ctx.inputs.config.backward_tol;
    let phi = |rho: f64| ctx.stage(k, data, rho, count);
    let fail = |reason: String| FunnelError::Backward { step: k, reason };

    let mut x = target;
    let first = phi(x)?;
    let (mut lo, mut lo_res, mut hi, mut h_hi);
    if first.0.rho_next <= target {
        lo = x;
        lo_res = first;
        loop {
            x *= 2.0;
            let r = phi(x)?;
            if r.0.rho_next > target {
                hi = x;
                h_hi = r.0.rho_next - target;
                break;
            }
            lo = x;
            lo_res = r;
            if x > target * 1e12 {
                return Err(fail("stage map never exceeds the target".into()));
            }
        }
    } else {
        hi = x;
        h_hi = first.0.rho_next - target;
        loop {
            x /= 2.0;
            if x < target * 1e-12 {
                return Err(fail("no feasible level above 1e-12 of the target".into()));
            }
            let r = phi(x)?;
            if r.0.rho_next <= target {
                lo = x;
                lo_res = r;
                break;
            }
            hi = x;
            h_hi = r.0.rho_next - target;
        }
    }
    let mut h_lo = lo_res.0.rho_next - target;
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= tol * hi {
            break;
        }
        let mut x = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
        if !(x > lo && x < hi) || (x - lo).min(hi - x) < 1e-3 * tol * hi {
            x = 0.5 * (lo + hi);
        }
        let r = phi(x)?;
        let h = r.0.rho_next - target;
        if h <= 0.0 {
            lo = x;
            h_lo = h;
            lo_res = r;
            if side == -1 {
                h_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            h_hi = h;
            if side == 1 {
                h_lo *= 0.5;
            }
            side = 1;
        }
    }
    Ok((lo, lo_res.0, lo_res.1))
}

/// One stage of a computed funnel, rebuilt for inspection and export.
#[derive(Clone, Debug)]
pub struct StageView {
    pub step: usize,
    pub rho: f64,
    pub rho_next: f64,
    pub dt: f64,
    pub p: nalgebra::DMatrix<f64>,
    pub constraint: StageConstraint,
    /// The samples the forward sweep draws at `ρ_k`.
    pub batch: SampleBatch,
}

impl StageView {
    /// `V̇(x̄, w) = ∇V·f + ½ x̄ᵀ(P_{k+1} - P_k)x̄/Δt`, so that on the slice
    /// boundary `D_k = ρ̇ - V̇`.
    pub fn vdot(&self, xbar: &[f64], w: &[f64]) -> f64 {
        -self.constraint.eval_rest(xbar, w) - 0.5 * crate::linalg::quad_form(&self.p, xbar) / self.dt
    }

    /// `(u, v, V̇)` on a `grid × grid` lattice over state axes `axes`,
    /// spanning `extent` times the slice's projected half-width.
    pub fn vdot_slice(&self, axes: [usize; 2], grid: usize, extent: f64) -> Result<Vec<[f64; 3]>, FunnelError> {
        let n = self.p.nrows();
        if axes[0] == axes[1] || axes.iter().any(|a| *a >= n) {
            return Err(FunnelError::Config(format!(
                "slice axes {axes:?} invalid for {n} states"
            )));
        }
        if grid < 2 || !(extent > 0.0) {
            return Err(FunnelError::Config(
                "slice grid needs at least 2 points and a positive extent".into(),
            ));
        }
        let pinv = self
            .p
            .clone()
            .try_inverse()
            .ok_or_else(|| FunnelError::Config(format!("P_{} is singular", self.step)))?;
        let half = axes.map(|a| extent * (2.0 * self.rho * pinv[(a, a)]).sqrt());
        let w = vec![0.0; self.constraint.rest.nvars() - n];
        let at = |i: usize, h: f64| -h + 2.0 * h * i as f64 / (grid - 1) as f64;
        let mut out = Vec::with_capacity(grid * grid);
        let mut x = vec![0.0; n];
        for i in 0..grid {
            for j in 0..grid {
                let (u, v) = (at(i, half[0]), at(j, half[1]));
                x[axes[0]] = u;
                x[axes[1]] = v;
                out.push([u, v, self.vdot(&x, &w)]);
            }
        }
        Ok(out)
    }
}

/// Rebuilds stage `k` of `funnel`, which must span the whole trajectory.
pub fn inspect_stage(inputs: &FunnelInputs<'_>, funnel: &Funnel, k: usize) -> Result<StageView, FunnelError> {
    let ctx = Context::new(inputs)?;
    if funnel.times != inputs.traj.times {
        return Err(FunnelError::Config(
            "funnel and trajectory use different time grids".into(),
        ));
    }
    if k + 1 >= funnel.len() {
        return Err(FunnelError::Config(format!(
            "step {k} out of range for {} knots",
            funnel.len()
        )));
    }
    let data = ctx.step_data(k)?;
    let count = funnel.diagnostics.samples_per_step.max(1);
    let batch = ctx.batch(k, &data, funnel.rho[k], count, 0)?;
    Ok(StageView {
        step: k,
        rho: funnel.rho[k],
        rho_next: funnel.rho[k + 1],
        dt: data.dt,
        p: inputs.cert.p[k].clone(),
        constraint: data.constraint,
        batch,
    })
}
