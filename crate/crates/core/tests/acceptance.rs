//! End-to-end acceptance checks. Each test prints one `A<n> ...: PASS|FAIL`
//! line on stderr (uncaptured) before asserting.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use funnel_core::dynamics::{ClosedLoopModel, Dynamics, DynamicsError};
use funnel_core::funnel::{
    build_stage_constraint, initial_rho, inspect_stage, required_basis_degree, run_forward, solve_stage_sdp, Funnel,
    InitialSet, StageProblem,
};
use funnel_core::io::save_funnel;
use funnel_core::pipeline::Pipeline;
use funnel_core::poly::{eval_all, BasisSpec, Scalar, Taylor};
use funnel_core::sampling::{
    draw_batch, sample_disturbance_boundary, sample_state_boundary, vdot_gradient_w, DisturbanceSet, NewtonSampler,
    Provenance, RescaleSampler, SampleBatch,
};
use funnel_core::scenarios::{DubinsScenario, EntryScenario};
use funnel_core::sdp::{backends, SdpOptions};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(id: &str, what: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{id} {what}: {verdict} ({detail})");
}

struct Run {
    pipeline: Pipeline,
    funnel: Funnel,
    seconds: f64,
}

fn computed(scenario: funnel_core::scenarios::Scenario) -> Run {
    let pipeline = Pipeline::new(scenario).expect("scenario builds");
    let started = Instant::now();
    let funnel = pipeline
        .forward()
        .unwrap_or_else(|f| panic!("forward sweep failed: {}", f.error));
    Run {
        pipeline,
        funnel,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn dubins() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| computed(DubinsScenario::default().build().unwrap()))
}

fn entry() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| computed(EntryScenario::default().build().unwrap()))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

fn quad(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = DVector::from_row_slice(x);
    v.dot(&(m * &v))
}

/// Cubic test plant with disturbances entering nonlinearly, so that
/// `∂V̇/∂w = 0` has roots inside `W`:
///
/// ```text
/// ẋ0 = x1
/// ẋ1 = -x0 - x0³/2 + u + x1 q(w),   q = (w0 - 0.2)² + (w1 + 0.1)²/2
/// ẋ2 = -x2 + x0 h(w),               h = w0³/3 + w0 w1
/// ```
#[derive(Debug)]
struct Wobbly;

impl Wobbly {
    fn rhs<S: Scalar>(x: &[S], u: &[S], w: &[S]) -> Vec<S> {
        let a = w[0].clone() + (-0.2);
        let b = w[1].clone() + 0.1;
        let q = a.square() + b.square() * 0.5;
        let h = w[0].square() * w[0].clone() * (1.0 / 3.0) + w[0].clone() * w[1].clone();
        vec![
            x[1].clone(),
            -x[0].clone() - x[0].square() * x[0].clone() * 0.5 + u[0].clone() + x[1].clone() * q,
            -x[2].clone() + x[0].clone() * h,
        ]
    }

    const X_NOM: [f64; 3] = [0.3, -0.2, 0.1];

    fn closed_loop() -> ClosedLoopModel {
        let gain = DMatrix::from_row_slice(1, 3, &[-1.0, -0.8, 0.0]);
        ClosedLoopModel::new(Arc::new(Wobbly), Self::X_NOM.to_vec(), vec![0.05], gain).unwrap()
    }

    /// Hand-derived `∂/∂w [fᵀ P x̄]`.
    fn vdot_gradient(p: &DMatrix<f64>, xbar: &[f64], w: &[f64]) -> [f64; 2] {
        let px = p * DVector::from_row_slice(xbar);
        let x0 = Self::X_NOM[0] + xbar[0];
        let x1 = Self::X_NOM[1] + xbar[1];
        let (s, t) = (px[1] * x1, px[2] * x0);
        [
            s * 2.0 * (w[0] - 0.2) + t * (w[0] * w[0] + w[1]),
            s * (w[1] + 0.1) + t * w[0],
        ]
    }
}

impl Dynamics for Wobbly {
    fn name(&self) -> &str {
        "wobbly"
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn disturbance_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        Ok(Self::rhs(x, u, w))
    }
    fn eval_taylor(&self, x: &[Taylor], u: &[Taylor], w: &[Taylor]) -> Result<Vec<Taylor>, DynamicsError> {
        Ok(Self::rhs(x, u, w))
    }
}

fn unit_ball() -> DisturbanceSet {
    DisturbanceSet::new(DMatrix::identity(2, 2) * 2.0).unwrap()
}

#[test]
fn a1_initial_level_touches_the_initial_set() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_touch, mut worst_break): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for _ in 0..100 {
        let m1 = random_pd(&mut rng, 6);
        let p1 = random_pd(&mut rng, 6);
        let rho = initial_rho(&InitialSet::new(m1.clone()).unwrap(), &p1).unwrap();
        worst_touch = worst_touch.max(min_eig(&(&m1 - &p1 / rho)).abs());
        worst_break = worst_break.max(min_eig(&(&m1 - &p1 / (rho * (1.0 - 1e-6)))));
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst_touch <= 1e-9 && worst_break < 0.0 && secs < 1.0;
    report(
        "A1",
        "initial constraint",
        pass,
        format!("max |λ_min| {worst_touch:.2e}, shrunk λ_min ≤ {worst_break:.2e}, {secs:.3} s"),
    );
    assert!(pass);
}

fn state_residual(p: &DMatrix<f64>, rho: f64, x: &[f64]) -> f64 {
    (0.5 * quad(p, x) / rho - 1.0).abs()
}

fn boundary_residuals(batch: &SampleBatch, p: &DMatrix<f64>, rho: f64, u: &DMatrix<f64>) -> (f64, f64, usize) {
    let states = batch
        .states
        .iter()
        .map(|x| state_residual(p, rho, x))
        .fold(0.0, f64::max);
    let mut dist: f64 = 0.0;
    let mut n = batch.states.len();
    for (_, w, tag) in &batch.pairs {
        if *tag == Provenance::Boundary {
            dist = dist.max((0.5 * quad(u, w) - 1.0).abs());
            n += 1;
        }
    }
    (states, dist, n)
}

#[test]
fn a2_samples_lie_on_their_varieties() {
    let plant = EntryScenario::default().build().unwrap();
    let pipeline = Pipeline::new(plant).unwrap();
    let started = Instant::now();
    let p = &pipeline.cert.p[17];
    let rho = 1e4;
    let u = &pipeline.disturbance.u;
    let mut worst_state: f64 = 0.0;
    let mut worst_dist: f64 = 0.0;
    let mut count = 0;
    for (seed, sampler) in [
        (1, &RescaleSampler as &dyn funnel_core::sampling::StateSampler),
        (2, &NewtonSampler),
    ] {
        let b = draw_batch(17, seed, sampler, p, rho, &pipeline.disturbance, None, 2500).unwrap();
        let (s, d, n) = boundary_residuals(&b, p, rho, u);
        worst_state = worst_state.max(s);
        worst_dist = worst_dist.max(d);
        count += n;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let cl = Wobbly::closed_loop();
    let dynamics = cl.polynomialize(4).unwrap();
    let w_set = unit_ball();
    let q = random_pd(&mut rng, 3);
    let b = draw_batch(0, 3, &RescaleSampler, &q, 0.05, &w_set, Some(&dynamics), 2500).unwrap();
    let (s, d, n) = boundary_residuals(&b, &q, 0.05, &w_set.u);
    worst_state = worst_state.max(s);
    worst_dist = worst_dist.max(d);
    count += n;
    let mut worst_crit: f64 = 0.0;
    let mut roots = 0;
    for (i, w, tag) in &b.pairs {
        if *tag == Provenance::Critical {
            let g = Wobbly::vdot_gradient(&q, &b.states[*i], w);
            worst_crit = worst_crit.max(g[0].abs().max(g[1].abs()));
            assert!(0.5 * quad(&w_set.u, w) <= 1.0 + 1e-9, "critical root outside W");
            roots += 1;
        }
    }
    count += roots;
    let secs = started.elapsed().as_secs_f64();
    let worst = worst_state.max(worst_dist).max(worst_crit);
    let pass = worst <= 1e-10 && count >= 10_000 && roots >= 500 && secs < 10.0;
    report(
        "A2",
        "variety residency",
        pass,
        format!(
            "{count} samples ({roots} critical), residuals B_k {worst_state:.1e}, ∂W {worst_dist:.1e}, \
             ∂V̇/∂w {worst_crit:.1e}, {secs:.2} s"
        ),
    );
    assert!(pass);
}

#[test]
fn a3_scalar_decay_matches_closed_form() {
    let dt = 0.01;
    let one = DMatrix::identity(1, 1);
    let f = vec![funnel_core::poly::MultiPoly::var(1, 0).scale(-1.0)];
    let constraint = build_stage_constraint(&one, &one, dt, &f).unwrap();
    let basis = BasisSpec::hermite(1, required_basis_degree(1, 1));
    let w = DisturbanceSet::empty();
    let backend = backends().get("ipm").unwrap();
    let eps_rel = 1e-6;
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for (k, rho) in [0.5, 1.0, 3.7, 100.0].into_iter().enumerate() {
        let batch = draw_batch(k, 9, &RescaleSampler, &one, rho, &w, None, 16).unwrap();
        let problem = StageProblem {
            step: k,
            dt,
            rho,
            p: &one,
            constraint: &constraint,
            batch: &batch,
            basis: &basis,
            d: 1,
            eps: eps_rel * rho,
            scales: None,
            disturbance: &w,
        };
        let r = solve_stage_sdp(&problem, backend.as_ref(), &SdpOptions::default()).unwrap();
        let err = (r.rho_next - rho * (1.0 - 2.0 * dt)).abs();
        pass &= err <= 1e-6 + eps_rel * rho * dt;
        worst = worst.max(err);
    }
    report(
        "A3",
        "scalar decay oracle",
        pass,
        format!("max |ρ₊ - ρ(1-2Δt)| = {worst:.2e}"),
    );
    assert!(pass);
}

/// Certificate hygiene of every accepted stage, plus an independent check
/// of `D_k` on freshly drawn boundary pairs.
fn hygiene(run: &Run, seed: u64) -> (bool, String) {
    let f = &run.funnel;
    let inputs = run.pipeline.inputs();
    let mut worst_res: f64 = 0.0;
    let mut worst_eig = f64::INFINITY;
    for s in &f.diagnostics.stages {
        worst_res = worst_res.max(s.max_residual);
        worst_eig = worst_eig.min(s.q_min_eig);
    }
    let mut worst_fresh = f64::INFINITY;
    for k in 0..f.len() - 1 {
        let view = inspect_stage(&inputs, f, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64) << 20);
        let xs = sample_state_boundary(&view.p, view.rho, 1000, &mut rng).unwrap();
        let ws = sample_disturbance_boundary(inputs.disturbance, 1000, &mut rng);
        let scale = view.rho_next / view.dt;
        for (x, w) in xs.iter().zip(&ws) {
            worst_fresh = worst_fresh.min(view.constraint.eval(x, w, view.rho_next) / scale);
        }
    }
    let pass = worst_res <= 1e-6 && worst_eig >= -1e-7 && worst_fresh >= -1e-8;
    (
        pass,
        format!(
            "{} stages, max residual {worst_res:.1e}, min λ(Q) {worst_eig:.1e}, min fresh D/scale {worst_fresh:.2e}",
            f.len() - 1
        ),
    )
}

#[test]
fn a4_stage_certificates_are_clean() {
    let (pd, dd) = hygiene(dubins(), 41);
    report("A4", "stage hygiene, dubins", pd, dd);
    let (pe, de) = hygiene(entry(), 42);
    report("A4", "stage hygiene, entry", pe, de);
    assert!(pd && pe);
}

/// `ρ₊/Δt - ½x̄ᵀP₊x̄/Δt - fᵀP_k x̄` and the sum of the magnitudes of its terms.
fn chain(p: &DMatrix<f64>, p_next: &DMatrix<f64>, dt: f64, rho_next: f64, x: &[f64], fx: &[f64]) -> (f64, f64) {
    let terms = [
        rho_next / dt,
        -0.5 * quad(p_next, x) / dt,
        -DVector::from_row_slice(fx).dot(&(p * DVector::from_row_slice(x))),
    ];
    (terms.iter().sum(), terms.iter().map(|t| t.abs()).sum())
}

#[test]
fn a5_constraint_and_gradient_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let w_set = unit_ball();
    let mut worst_d: f64 = 0.0;

    // The cubic plant is polynomial, so its degree-4 expansion is exact and
    // the chain can use the true closed-loop dynamics.
    let cl = Wobbly::closed_loop();
    let dynamics = cl.polynomialize(4).unwrap();
    let (p, p_next) = (random_pd(&mut rng, 3), random_pd(&mut rng, 3));
    let (dt, rho, rho_next) = (0.02, 0.3, 0.31);
    let c = build_stage_constraint(&p, &p_next, dt, &dynamics).unwrap();
    let xs = sample_state_boundary(&p, rho, 100, &mut rng).unwrap();
    for x in &xs {
        let w = w_set.sample_interior(&mut rng);
        let (want, mag) = chain(&p, &p_next, dt, rho_next, x, &cl.closed_loop_deviation(x, &w).unwrap());
        worst_d = worst_d.max((c.eval(x, &w, rho_next) - want).abs() / mag);
    }

    // Entry at its working expansion degree, against the same polynomials
    // evaluated numerically.
    let run = entry();
    let k = 17;
    let traj = &run.pipeline.scenario.traj;
    let cert = &run.pipeline.cert;
    let ecl = ClosedLoopModel::new(
        Arc::clone(&run.pipeline.scenario.model),
        traj.states[k].clone(),
        traj.control(k).to_vec(),
        cert.k[k].clone(),
    )
    .unwrap();
    let edyn = ecl.polynomialize(1).unwrap();
    let (dt, rho, rho_next) = (traj.dt(k), run.funnel.rho[k], run.funnel.rho[k + 1]);
    let ec = build_stage_constraint(&cert.p[k], &cert.p[k + 1], dt, &edyn).unwrap();
    let xs = sample_state_boundary(&cert.p[k], rho, 100, &mut rng).unwrap();
    for x in &xs {
        let w = run.pipeline.disturbance.sample_interior(&mut rng);
        let z: Vec<f64> = x.iter().chain(&w).copied().collect();
        let fx = eval_all(&edyn, &z).unwrap();
        let (want, mag) = chain(&cert.p[k], &cert.p[k + 1], dt, rho_next, x, &fx);
        worst_d = worst_d.max((ec.eval(x, &w, rho_next) - want).abs() / mag);
    }

    // ∂V̇/∂w against central differences of fᵀP x̄ with the true dynamics.
    let mut worst_g: f64 = 0.0;
    let dub = dubins();
    let dk = 5;
    let dtraj = &dub.pipeline.scenario.traj;
    let dcl = ClosedLoopModel::new(
        Arc::clone(&dub.pipeline.scenario.model),
        dtraj.states[dk].clone(),
        dtraj.control(dk).to_vec(),
        dub.pipeline.cert.k[dk].clone(),
    )
    .unwrap();
    let ddyn = dcl.polynomialize(3).unwrap();
    let cases: [(
        &ClosedLoopModel,
        &[funnel_core::poly::MultiPoly],
        &DMatrix<f64>,
        &DisturbanceSet,
    ); 2] = [
        (&cl, &dynamics, &p, &w_set),
        (&dcl, &ddyn, &dub.pipeline.cert.p[dk], &dub.pipeline.disturbance),
    ];
    for (model, polys, pk, set) in cases {
        for _ in 0..50 {
            let x = sample_state_boundary(pk, 0.2, 1, &mut rng).unwrap().pop().unwrap();
            let w = set.sample_interior(&mut rng);
            let px = pk * DVector::from_row_slice(&x);
            let phi = |w: &[f64]| DVector::from_vec(model.closed_loop_deviation(&x, w).unwrap()).dot(&px);
            let grad = vdot_gradient_w(polys, pk, &x);
            let got = eval_all(&grad, &w).unwrap();
            let mut num = vec![0.0; w.len()];
            for j in 0..w.len() {
                let h = 1e-5 * w[j].abs().max(1e-2);
                let (mut a, mut b) = (w.clone(), w.clone());
                a[j] += h;
                b[j] -= h;
                num[j] = (phi(&a) - phi(&b)) / (2.0 * h);
            }
            let norm = num.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let err = got.iter().zip(&num).fold(0.0f64, |m, (g, n)| m.max((g - n).abs()));
            worst_g = worst_g.max(err / norm);
        }
    }
    let pass = worst_d <= 1e-8 && worst_g <= 1e-5;
    report(
        "A5",
        "stage constraint and ∂V̇/∂w identities",
        pass,
        format!("max rel err D {worst_d:.1e}, ∂V̇/∂w {worst_g:.1e}"),
    );
    assert!(pass);
}

fn containment(run: &Run) -> (bool, String) {
    let settings = run.pipeline.scenario.mc.clone();
    let (r, c) = run.pipeline.monte_carlo(&run.funnel, &settings).unwrap();
    let pass = r.trajectories >= 10_000 && r.violations == 0 && r.domain_failures == 0 && c.worst_margin < 1.0;
    (
        pass,
        format!(
            "{} rollouts, {} violations, worst margin {:.4} at step {}",
            r.trajectories, r.violations, c.worst_margin, c.worst_step
        ),
    )
}

#[test]
fn a6_monte_carlo_stays_inside() {
    let (pd, dd) = containment(dubins());
    report("A6", "containment, dubins", pd, dd);
    let (pe, de) = containment(entry());
    report("A6", "containment, entry", pe, de);
    assert!(pd && pe);
}

#[test]
fn a7_entry_funnel_has_early_peak_and_late_growth() {
    let rho = &entry().funnel.rho;
    let n = rho.len() - 1;
    let peak = (1..=n / 5).find(|&k| rho[k] > rho[k - 1] && rho[k] > rho[k + 1]);
    let tail = (n - n / 10)..n;
    let growing = tail.clone().all(|k| rho[k + 1] > rho[k]);
    let pass = peak.is_some() && growing;
    report(
        "A7",
        "entry funnel shape",
        pass,
        format!(
            "first local max at step {peak:?}, ρ over steps {}..={n}: {:.3e} -> {:.3e}",
            tail.start, rho[tail.start], rho[n]
        ),
    );
    assert!(pass);
}

#[test]
fn a8_entry_funnel_runtime() {
    let run = entry();
    let pass = run.seconds <= 300.0;
    report(
        "A8",
        "entry runtime",
        pass,
        format!("{} knots in {:.1} s", run.funnel.len(), run.seconds),
    );
    assert!(pass);
}

#[test]
fn a9_identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save_funnel(&dubins().funnel, &a).unwrap();
    save_funnel(&computed(DubinsScenario::default().build().unwrap()).funnel, &b).unwrap();
    let (first, second) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let pass = first == second;
    report("A9", "determinism", pass, format!("{} bytes each", first.len()));
    assert!(pass);
}

#[test]
fn a10_backward_then_forward_closes_the_loop() {
    let fwd = dubins();
    let pipeline = &fwd.pipeline;
    let n = fwd.funnel.len() - 1;
    let goal = &pipeline.cert.p[n] / fwd.funnel.rho[n];
    let bwd = pipeline
        .backward(&goal)
        .unwrap_or_else(|f| panic!("backward sweep failed: {}", f.error));
    let m1 = &pipeline.cert.p[0] / bwd.rho[0];
    let again = run_forward(&pipeline.inputs(), &InitialSet::new(m1).unwrap())
        .unwrap_or_else(|f| panic!("forward sweep failed: {}", f.error));
    let rel = (again.rho[n] - bwd.rho[n]).abs() / bwd.rho[n];
    let pass = rel <= 0.05;
    report(
        "A10",
        "backward/forward consistency",
        pass,
        format!(
            "goal ρ_N {:.6e}, backward ρ_1 {:.6e}, forward ρ_N {:.6e}, rel diff {rel:.2e}",
            bwd.rho[n], bwd.rho[0], again.rho[n]
        ),
    );
    assert!(pass);
}
