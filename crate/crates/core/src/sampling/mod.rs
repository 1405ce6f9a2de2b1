//! Samples on the varieties the stage constraints are enforced on: funnel
//! slice boundaries `B_k`, the disturbance boundary `∂W`, and critical sets
//! `O(x̄)` where `∂V̇/∂w` vanishes.

mod rank;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky_lower, quad_form, symmetrize, LinalgError};
use crate::poly::{newton_solve, MultiPoly};
use crate::registry::Registry;

pub use rank::{estimate_min_samples, RankEstimate, RowSpace};

/// Samples drawn per RNG stream; chunks are merged in stream order.
pub const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("rho must be positive, got {0}")]
    BadRho(f64),
    #[error("rank did not saturate within {limit} samples (rank {rank} at {count})")]
    NoSaturation { limit: usize, rank: usize, count: usize },
    #[error("sampler '{name}' failed: {reason}")]
    Sampler { name: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Rescale,
    Newton,
    Boundary,
    Critical,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Rescale => "rescale",
            Provenance::Newton => "newton",
            Provenance::Boundary => "boundary",
            Provenance::Critical => "critical",
        }
    }
}

/// `W = {w | ½ wᵀUw ≤ 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSet {
    pub u: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl DisturbanceSet {
    pub fn new(u: DMatrix<f64>) -> Result<Self, SamplingError> {
        let u = symmetrize(&u);
        let chol = if u.nrows() == 0 {
            DMatrix::zeros(0, 0)
        } else {
            cholesky_lower(&u, "disturbance bound U")?
        };
        Ok(DisturbanceSet { u, chol })
    }

    /// The trivial set for models without disturbances.
    pub fn empty() -> Self {
        DisturbanceSet {
            u: DMatrix::zeros(0, 0),
            chol: DMatrix::zeros(0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `½ wᵀUw - 1`; zero on `∂W`.
    pub fn level(&self, w: &[f64]) -> f64 {
        0.5 * quad_form(&self.u, w) - 1.0
    }

    pub fn contains(&self, w: &[f64], slack: f64) -> bool {
        self.level(w) <= slack
    }

    /// Lower Cholesky factor `L` with `U = L Lᵀ`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Uniform draw from the interior of `W`.
    pub fn sample_interior(&self, rng: &mut impl Rng) -> Vec<f64> {
        let p = self.dim();
        if p == 0 {
            return Vec::new();
        }
        let dir = level_point(&self.chol, 1.0, rng);
        let radius: f64 = rng.random::<f64>().powf(1.0 / p as f64);
        dir.into_iter().map(|v| v * radius).collect()
    }
}

fn normal_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

/// Point on `½ xᵀMx = ρ` given the lower factor `M = L Lᵀ`, uniform in the
/// whitened coordinates `Lᵀx` so that strongly anisotropic ellipsoids are
/// covered evenly.
fn level_point(l: &DMatrix<f64>, rho: f64, rng: &mut impl Rng) -> Vec<f64> {
    let g = DVector::from_vec(normal_vec(l.nrows(), rng));
    let y = &g * ((2.0 * rho).sqrt() / g.norm());
    let x = l.transpose().solve_upper_triangular(&y).expect("nonsingular factor");
    x.iter().copied().collect()
}

/// Generator for stream `stream` of step `step` under `seed`.
pub fn stream_rng(seed: u64, step: usize, stream: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) | stream as u64);
    rng
}

/// Draws `count` items in parallel, `CHUNK` per RNG stream, merged in
/// stream order so the result depends only on `(seed, step)`.
pub fn par_draw<T: Send>(seed: u64, step: usize, count: usize, draw: impl Fn(&mut ChaCha8Rng) -> T + Sync) -> Vec<T> {
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, step, c);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

pub fn sample_state_boundary(
    p: &DMatrix<f64>,
    rho: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>, SamplingError> {
    if !(rho > 0.0) {
        return Err(SamplingError::BadRho(rho));
    }
    let l = cholesky_lower(p, "P_k")?;
    Ok((0..count).map(|_| level_point(&l, rho, rng)).collect())
}

pub fn sample_disturbance_boundary(set: &DisturbanceSet, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    if set.dim() == 0 {
        return vec![Vec::new(); count];
    }
    (0..count).map(|_| level_point(&set.chol, 1.0, rng)).collect()
}

/// Rescales a fixed direction onto `B_k` (used by the deterministic
/// single-sample examples and by callers that reuse directions).
pub fn rescale_onto(p: &DMatrix<f64>, rho: f64, x: &[f64]) -> Vec<f64> {
    let s = (0.5 * quad_form(p, x) / rho).sqrt();
    x.iter().map(|v| v / s).collect()
}

/// `∂V̇/∂w = ∂/∂w [f(x̄, w)]ᵀ P x̄` as polynomials in `w` for fixed `x̄`.
///
/// `dynamics` are polynomials in `(x̄, w)`; the result has `p` variables.
pub fn vdot_gradient_w(dynamics: &[MultiPoly], p: &DMatrix<f64>, xbar: &[f64]) -> Vec<MultiPoly> {
    let n = xbar.len();
    let nv = dynamics.first().map_or(n, MultiPoly::nvars);
    let pd = nv - n;
    let px = p * nalgebra::DVector::from_row_slice(xbar);
    let subst: Vec<Option<f64>> = xbar.iter().map(|v| Some(*v)).chain((0..pd).map(|_| None)).collect();
    let mut vdot = MultiPoly::zero(pd);
    for (fi, pxi) in dynamics.iter().zip(px.iter()) {
        let fw = fi.partial_eval(&subst).expect("dimensions match");
        vdot = &vdot + &fw.scale(*pxi);
    }
    let vars: Vec<usize> = (0..pd).collect();
    vdot.grad(&vars).expect("variables in range")
}

/// Newton root of `∂V̇/∂w = 0` inside `W`, if the gradient depends on `w`.
pub fn sample_critical_set(
    dynamics: &[MultiPoly],
    p: &DMatrix<f64>,
    xbar: &[f64],
    set: &DisturbanceSet,
    rng: &mut impl Rng,
) -> Option<Vec<f64>> {
    if set.dim() == 0 {
        return None;
    }
    let grad = vdot_gradient_w(dynamics, p, xbar);
    if grad.iter().all(|g| g.degree() == 0) {
        return None;
    }
    // Tolerances scale with the gradient's coefficients, which carry x̄ᵀP.
    let scale = grad.iter().map(MultiPoly::max_abs_coefficient).fold(1.0, f64::max);
    let guess = set.sample_interior(rng);
    let root = newton_solve(&grad, &guess, 1e-12 * scale, 50).ok()?;
    let inf = grad
        .iter()
        .map(|g| g.eval(&root).map(f64::abs).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    (inf <= 1e-10 * scale && set.contains(&root, 1e-9)).then_some(root)
}

/// Strategy for drawing states on `B_k = {x̄ | ½ x̄ᵀ(P/ρ)x̄ = 1}`.
pub trait StateSampler: Send + Sync {
    fn name(&self) -> &str;
    fn provenance(&self) -> Provenance;
    fn sample(&self, p: &DMatrix<f64>, rho: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SamplingError>;
}

pub struct RescaleSampler;

impl StateSampler for RescaleSampler {
    fn name(&self) -> &str {
        "rescale"
    }
    fn provenance(&self) -> Provenance {
        Provenance::Rescale
    }
    fn sample(&self, p: &DMatrix<f64>, rho: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SamplingError> {
        Ok(level_point(&cholesky_lower(p, "P_k")?, rho, rng))
    }
}

/// Least-norm Newton on `½ yᵀy/ρ - 1 = 0` in the whitened coordinates
/// `y = Lᵀx̄` (`P = LLᵀ`), from a Gaussian start at a random radius.
///
/// Whitening matters: entry certificates have condition numbers near
/// 1e11, where Newton in `x̄` overshoots along the stiff axis and stalls.
pub struct NewtonSampler;

impl StateSampler for NewtonSampler {
    fn name(&self) -> &str {
        "newton"
    }
    fn provenance(&self) -> Provenance {
        Provenance::Newton
    }
    fn sample(&self, p: &DMatrix<f64>, rho: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SamplingError> {
        let n = p.nrows();
        let l = cholesky_lower(p, "P_k")?;
        let mut g = MultiPoly::constant(n, -1.0);
        for i in 0..n {
            g = &g + &(&MultiPoly::var(n, i) * &MultiPoly::var(n, i)).scale(0.5 / rho);
        }
        let r = (2.0 * rho).sqrt() * rng.random_range(0.5..2.0);
        let dir = DVector::from_vec(normal_vec(n, rng));
        let guess: Vec<f64> = (&dir * (r / dir.norm())).iter().copied().collect();
        let y = newton_solve(&[g], &guess, 1e-13, 60).map_err(|e| SamplingError::Sampler {
            name: "newton".into(),
            reason: e.to_string(),
        })?;
        let x = l
            .transpose()
            .solve_upper_triangular(&DVector::from_vec(y))
            .expect("nonsingular factor");
        Ok(x.iter().copied().collect())
    }
}

pub fn state_samplers() -> Registry<dyn StateSampler> {
    let mut r: Registry<dyn StateSampler> = Registry::new("state sampler");
    r.register("rescale", Arc::new(RescaleSampler));
    r.register("newton", Arc::new(NewtonSampler));
    r
}

/// One stage's samples: states on `B_k` and `(state, disturbance)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub step: usize,
    pub states: Vec<Vec<f64>>,
    pub state_tags: Vec<Provenance>,
    /// `(state index, w, tag)`; every state has one boundary pair plus any
    /// critical-set pair.
    pub pairs: Vec<(usize, Vec<f64>, Provenance)>,
}

impl SampleBatch {
    /// Largest `|½ x̄ᵀ(P/ρ)x̄ - 1|` and `|½ wᵀUw - 1|` over boundary samples,
    /// and the largest critical-set gradient norm.
    pub fn residuals(
        &self,
        p: &DMatrix<f64>,
        rho: f64,
        set: &DisturbanceSet,
        dynamics: Option<&[MultiPoly]>,
    ) -> (f64, f64, f64) {
        let state = self
            .states
            .iter()
            .map(|x| (0.5 * quad_form(p, x) / rho - 1.0).abs())
            .fold(0.0, f64::max);
        let mut dist: f64 = 0.0;
        let mut crit: f64 = 0.0;
        for (i, w, tag) in &self.pairs {
            match tag {
                Provenance::Boundary if set.dim() > 0 => dist = dist.max(set.level(w).abs()),
                Provenance::Critical => {
                    if let Some(d) = dynamics {
                        let g = vdot_gradient_w(d, p, &self.states[*i]);
                        for gi in g {
                            crit = crit.max(gi.eval(w).map(f64::abs).unwrap_or(f64::INFINITY));
                        }
                    }
                }
                _ => {}
            }
        }
        (state, dist, crit)
    }
}

/// Draws `count` states with `sampler` and pairs each with one `∂W` draw
/// plus a critical-set root when `dynamics` has one.
#[allow(clippy::too_many_arguments)]
pub fn draw_batch(
    step: usize,
    seed: u64,
    sampler: &dyn StateSampler,
    p: &DMatrix<f64>,
    rho: f64,
    set: &DisturbanceSet,
    dynamics: Option<&[MultiPoly]>,
    count: usize,
) -> Result<SampleBatch, SamplingError> {
    if !(rho > 0.0) {
        return Err(SamplingError::BadRho(rho));
    }
    cholesky_lower(p, "P_k")?;
    type Drawn = Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>), SamplingError>;
    let drawn: Vec<Drawn> = par_draw(seed, step, count, |rng| {
        let x = sampler.sample(p, rho, rng)?;
        let w = sample_disturbance_boundary(set, 1, rng).pop().unwrap_or_default();
        let c = dynamics.and_then(|d| sample_critical_set(d, p, &x, set, rng));
        Ok((x, w, c))
    });
    let mut batch = SampleBatch {
        step,
        states: Vec::with_capacity(count),
        state_tags: Vec::with_capacity(count),
        pairs: Vec::with_capacity(count),
    };
    for (i, d) in drawn.into_iter().enumerate() {
        let (x, w, c) = d?;
        batch.states.push(x);
        batch.state_tags.push(sampler.provenance());
        batch.pairs.push((i, w, Provenance::Boundary));
        if let Some(c) = c {
            batch.pairs.push((i, c, Provenance::Critical));
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_examples() {
        let p = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(rescale_onto(&p, 1.0, &[1.0, 0.0]), vec![1.0, 0.0]);
        let x = rescale_onto(&DMatrix::identity(2, 2), 2.0, &[0.6, 0.8]);
        assert!((x[0] - 1.2).abs() < 1e-15 && (x[1] - 1.6).abs() < 1e-15);
        let set = DisturbanceSet::new(DMatrix::identity(2, 2) * 2.0).unwrap();
        assert_eq!(rescale_onto(&set.u, 1.0, &[1.0, 0.0]), vec![1.0, 0.0]);
        let w = rescale_onto(&DMatrix::identity(2, 2), 1.0, &[0.0, 1.0]);
        assert!((w[1] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn critical_set_examples() {
        // f = -x + w^2, P = 1: dV̇/dw = 2 w x
        let x = MultiPoly::var(2, 0);
        let w = MultiPoly::var(2, 1);
        let f = vec![&(-&x) + &(&w * &w)];
        let p = DMatrix::identity(1, 1);
        let set = DisturbanceSet::new(DMatrix::identity(1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample_critical_set(&f, &p, &[0.7], &set, &mut rng).unwrap();
        assert!(r[0].abs() < 1e-10);
        // affine in w
        let g = vec![&(-&x) + &w];
        assert!(sample_critical_set(&g, &p, &[0.7], &set, &mut rng).is_none());
        // f = -x + (w - c)^2 x
        let c = 0.3;
        let wc = &w - &MultiPoly::constant(2, c);
        let h = vec![&(-&x) + &(&(&wc * &wc) * &x)];
        let r = sample_critical_set(&h, &p, &[0.5], &set, &mut rng).unwrap();
        assert!((r[0] - c).abs() < 1e-10);
    }

    #[test]
    fn batches_are_reproducible() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let set = DisturbanceSet::new(DMatrix::identity(1, 1) * 4.0).unwrap();
        let a = draw_batch(3, 11, &RescaleSampler, &p, 0.5, &set, None, 200).unwrap();
        let b = draw_batch(3, 11, &RescaleSampler, &p, 0.5, &set, None, 200).unwrap();
        assert_eq!(a, b);
        let c = draw_batch(4, 11, &RescaleSampler, &p, 0.5, &set, None, 200).unwrap();
        assert_ne!(a.states, c.states);
    }
}
