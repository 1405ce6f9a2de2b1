//! Primal–dual interior point method (Nesterov–Todd direction, Mehrotra
//! predictor–corrector) for [`SdpProblem`].

use nalgebra::{DMatrix, DVector};

use super::{presolve, RowMatrix, SdpBackend, SdpError, SdpOptions, SdpProblem, SdpSolution};
use crate::linalg::symmetrize;

const STEP_FRACTION: f64 = 0.98;
const SHORT_STEP: f64 = 0.1;
const CENTERING: f64 = 0.5;

#[derive(Clone, Copy, Debug)]
pub struct InteriorPoint {
    pub exploit_rank_one: bool,
}

impl SdpBackend for InteriorPoint {
    fn name(&self) -> &str {
        if self.exploit_rank_one {
            "ipm"
        } else {
            "ipm-dense"
        }
    }

    fn solve(&self, problem: &SdpProblem, options: &SdpOptions) -> Result<SdpSolution, SdpError> {
        problem.validate()?;
        let pre = presolve(problem, options.presolve_tol, options.consistency_tol)?;
        let ops = Operator::new(problem, &pre.kept, self.exploit_rank_one);
        let (t, x, y, iterations, gap) = run(problem, &ops, options)?;
        let mut dual = vec![0.0; problem.rows.len()];
        for (yi, &row) in y.iter().zip(&pre.kept) {
            dual[row] = *yi;
        }
        Ok(SdpSolution {
            scalar: t,
            objective: problem.objective(t, &x),
            primal_residual: problem.max_residual(t, &x),
            matrix: x,
            dual,
            iterations,
            gap,
            rows_kept: pre.kept.len(),
        })
    }
}

/// The constraint map restricted to the retained rows.
struct Operator {
    n: usize,
    a: DVector<f64>,
    b: DVector<f64>,
    kind: OpKind,
}

enum OpKind {
    /// Columns are the vectors `n_i`.
    RankOne(DMatrix<f64>),
    Dense(Vec<DMatrix<f64>>),
}

impl Operator {
    fn new(problem: &SdpProblem, kept: &[usize], exploit_rank_one: bool) -> Self {
        let rows: Vec<_> = kept.iter().map(|&i| &problem.rows[i]).collect();
        let m = rows.len();
        let kind = if exploit_rank_one && problem.is_rank_one() {
            OpKind::RankOne(DMatrix::from_fn(problem.dim, m, |r, c| match &rows[c].matrix {
                RowMatrix::RankOne(v) => v[r],
                RowMatrix::Dense(_) => unreachable!(),
            }))
        } else {
            OpKind::Dense(rows.iter().map(|r| r.matrix.to_dense()).collect())
        };
        Operator {
            n: problem.dim,
            a: DVector::from_iterator(m, rows.iter().map(|r| r.scalar)),
            b: DVector::from_iterator(m, rows.iter().map(|r| r.rhs)),
            kind,
        }
    }

    fn m(&self) -> usize {
        self.a.len()
    }

    /// `<A_i, X>` for every row.
    fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match &self.kind {
            OpKind::RankOne(nm) => {
                let xn = x * nm;
                DVector::from_iterator(self.m(), (0..self.m()).map(|i| nm.column(i).dot(&xn.column(i))))
            }
            OpKind::Dense(a) => DVector::from_iterator(self.m(), a.iter().map(|ai| ai.dot(x))),
        }
    }

    /// `Σ y_i A_i`.
    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            OpKind::RankOne(nm) => {
                let mut scaled = nm.clone();
                for (i, mut c) in scaled.column_iter_mut().enumerate() {
                    c *= y[i];
                }
                symmetrize(&(scaled * nm.transpose()))
            }
            OpKind::Dense(a) => {
                let mut out = DMatrix::zeros(self.n, self.n);
                for (ai, yi) in a.iter().zip(y.iter()) {
                    out += ai * *yi;
                }
                out
            }
        }
    }

    /// `M_ij = tr(A_i X A_j Y)`; the NT direction passes `X = Y = W`.
    fn schur(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            OpKind::RankOne(nm) => {
                let g1 = nm.transpose() * x * nm;
                let g2 = nm.transpose() * y * nm;
                g1.component_mul(&g2)
            }
            OpKind::Dense(a) => {
                let m = a.len();
                let prods: Vec<DMatrix<f64>> = a.iter().map(|aj| x * aj * y).collect();
                DMatrix::from_fn(m, m, |i, j| a[i].dot(&prods[j].transpose()))
            }
        }
    }

    /// `G_ij = <A_i, A_j>`.
    fn gram(&self) -> DMatrix<f64> {
        match &self.kind {
            OpKind::RankOne(nm) => {
                let g = nm.transpose() * nm;
                g.component_mul(&g)
            }
            OpKind::Dense(a) => DMatrix::from_fn(a.len(), a.len(), |i, j| a[i].dot(&a[j])),
        }
    }

    fn frob_norms(&self) -> Vec<f64> {
        match &self.kind {
            OpKind::RankOne(nm) => nm.column_iter().map(|c| c.norm_squared()).collect(),
            OpKind::Dense(a) => a.iter().map(|ai| ai.norm()).collect(),
        }
    }
}

/// Factorization of the Schur complement, with a regularized fallback.
/// Solves are refined against the unregularized matrix.
struct Factor {
    m: DMatrix<f64>,
    kind: FactorKind,
}

enum FactorKind {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

const REFINEMENT_STEPS: usize = 3;

impl Factor {
    fn new(m: DMatrix<f64>) -> Result<Self, SdpError> {
        let kind = FactorKind::new(&m)?;
        Ok(Factor { m, kind })
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, SdpError> {
        let mut u = self.kind.solve(rhs)?;
        for _ in 0..REFINEMENT_STEPS {
            let r = rhs - &self.m * &u;
            if r.amax() <= f64::EPSILON * rhs.amax() {
                break;
            }
            u += self.kind.solve(&r)?;
        }
        Ok(u)
    }
}

impl FactorKind {
    fn new(m: &DMatrix<f64>) -> Result<Self, SdpError> {
        let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut reg = 0.0;
        for _ in 0..6 {
            let mut mm = m.clone();
            for i in 0..mm.nrows() {
                mm[(i, i)] += reg;
            }
            if let Some(c) = mm.cholesky() {
                return Ok(FactorKind::Chol(c));
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        let lu = m.clone().lu();
        if lu.is_invertible() {
            Ok(FactorKind::Lu(lu))
        } else {
            Err(SdpError::Numerical("Schur complement is singular".into()))
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, SdpError> {
        match self {
            FactorKind::Chol(c) => Ok(c.solve(rhs)),
            FactorKind::Lu(l) => l
                .solve(rhs)
                .ok_or_else(|| SdpError::Numerical("Schur solve failed".into())),
        }
    }
}

/// The scaling point `W` with `W Z W = X`: with `X = LLᵀ`, `Z = RRᵀ` and
/// `RᵀL = U S Vᵀ`, `W = L V S⁻¹ Vᵀ Lᵀ`.
fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>, SdpError> {
    let lost = |what: &str| SdpError::Numerical(format!("{what} iterate lost positive definiteness"));
    let l = x.clone().cholesky().ok_or_else(|| lost("primal"))?.l();
    let r = z.clone().cholesky().ok_or_else(|| lost("dual"))?.l();
    let svd = (r.transpose() * &l).svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| SdpError::Numerical("scaling SVD failed".into()))?;
    let mut g = l * vt.transpose();
    for (mut col, s) in g.column_iter_mut().zip(svd.singular_values.iter()) {
        col /= s.sqrt();
    }
    Ok(symmetrize(&(&g * g.transpose())))
}

/// Largest step `α` keeping `X + α ΔX ⪰ 0` (infinite if unconstrained).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<f64, SdpError> {
    let l = x
        .clone()
        .cholesky()
        .ok_or_else(|| SdpError::Numerical("iterate lost positive definiteness".into()))?
        .l();
    let y = l
        .solve_lower_triangular(dx)
        .ok_or_else(|| SdpError::Numerical("triangular solve failed".into()))?;
    let s = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| SdpError::Numerical("triangular solve failed".into()))?;
    let lmin = symmetrize(&s).symmetric_eigenvalues().min();
    Ok(if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin })
}

struct Direction {
    dx: DMatrix<f64>,
    dt: f64,
    dy: DVector<f64>,
    dz: DMatrix<f64>,
}

fn run(problem: &SdpProblem, ops: &Operator, opts: &SdpOptions) -> Result<Iterate, SdpError> {
    let n = ops.n;
    let m = ops.m();
    let nf = n as f64;
    let c = problem.c_matrix.clone().unwrap_or_else(|| DMatrix::zeros(n, n));
    let ct = problem.c_scalar;
    let (a, b) = (&ops.a, &ops.b);
    let bnorm = b.norm();
    let cnorm = c.norm() + ct.abs();

    let norms = ops.frob_norms();
    let xi = (0..m)
        .map(|i| nf * (1.0 + b[i].abs()) / (1.0 + norms[i]))
        .fold(nf.sqrt().max(10.0), f64::max);
    let eta = norms.iter().copied().fold(cnorm.max(nf.sqrt()).max(10.0), f64::max);
    let mut x = DMatrix::identity(n, n) * xi;
    let mut z = DMatrix::identity(n, n) * eta;
    let mut y = DVector::zeros(m);
    let mut t = 0.0;
    let mut stalls = 0;
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut best: Option<(f64, f64, Iterate)> = None;
    // Least-norm projection that restores `A(ΔX) + a Δt = r_p` after the
    // Schur solve has lost accuracy near the boundary of the cone.
    let gram = Factor::new(ops.gram())?;

    let outcome = (|| {
        for iter in 0..opts.max_iter {
            let mu = x.dot(&z) / nf;
            let rp = b - ops.apply(&x) - a * t;
            let rd = symmetrize(&(&c - ops.adjoint(&y) - &z));
            let rt = ct - a.dot(&y);
            let pobj = ct * t + c.dot(&x);
            let dobj = b.dot(&y);
            let rel_p = rp.norm() / (1.0 + bnorm);
            let rel_d = (rd.norm() + rt.abs()) / (1.0 + cnorm);
            let rel_gap = x.dot(&z) / (1.0 + pobj.abs() + dobj.abs());
            last = (rel_p, rel_d, rel_gap);
            let merit = rel_p.max(rel_d).max(rel_gap);
            if merit <= opts.tol {
                return Ok((t, x, y, iter, rel_gap));
            }
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, rel_p.max(rel_d), (t, x.clone(), y.clone(), iter, rel_gap)));
            }

            let zinv = z
                .clone()
                .cholesky()
                .ok_or_else(|| SdpError::Numerical("dual iterate lost positive definiteness".into()))?
                .inverse();
            let w = nt_scaling(&x, &z)?;
            let factor = Factor::new(ops.schur(&w, &w))?;
            let av = factor.solve(a)?;
            let a_av = a.dot(&av);

            let direction = |sigma_mu: f64, corr: Option<&Direction>| -> Result<Direction, SdpError> {
                let mut h = &zinv * sigma_mu - &x - &w * &rd * &w;
                if let Some(p) = corr {
                    h -= &p.dx * &p.dz * &zinv;
                }
                let h = symmetrize(&h);
                let hv = &rp - ops.apply(&h);
                let u = factor.solve(&hv)?;
                let dt = if a_av.abs() > 0.0 { (a.dot(&u) - rt) / a_av } else { 0.0 };
                let dy = u - &av * dt;
                let ady = ops.adjoint(&dy);
                let dz = &rd - &ady;
                let mut dx = symmetrize(&(h + &w * ady * &w));
                let miss = &rp - ops.apply(&dx) - a * dt;
                dx += ops.adjoint(&gram.solve(&miss)?);
                Ok(Direction { dx, dt, dy, dz })
            };

            let pred = direction(0.0, None)?;
            let ap = (STEP_FRACTION * max_step(&x, &pred.dx)?).min(1.0);
            let ad = (STEP_FRACTION * max_step(&z, &pred.dz)?).min(1.0);
            let mu_aff = (&x + &pred.dx * ap).dot(&(&z + &pred.dz * ad)) / nf;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            let mut dir = direction(sigma * mu, Some(&pred))?;
            let mut ap = (STEP_FRACTION * max_step(&x, &dir.dx)?).min(1.0);
            let mut ad = (STEP_FRACTION * max_step(&z, &dir.dz)?).min(1.0);
            if ap.min(ad) < SHORT_STEP {
                // The corrector can push badly centred iterates into the cone
                // boundary; fall back to a damped centring direction.
                let safe = direction(sigma.max(CENTERING) * mu, None)?;
                let sp = (STEP_FRACTION * max_step(&x, &safe.dx)?).min(1.0);
                let sd = (STEP_FRACTION * max_step(&z, &safe.dz)?).min(1.0);
                if sp.min(sd) > ap.min(ad) {
                    (dir, ap, ad) = (safe, sp, sd);
                }
            }
            if ap < 1e-12 && ad < 1e-12 {
                stalls += 1;
                if stalls >= 3 {
                    return Err(SdpError::Numerical(format!(
                        "stalled at iteration {iter} (primal {rel_p:e}, dual {rel_d:e}, gap {rel_gap:e})"
                    )));
                }
            } else {
                stalls = 0;
            }
            log::trace!(
            "ipm {iter}: p {rel_p:.2e} d {rel_d:.2e} gap {rel_gap:.2e} mu {mu:.2e} t {t:.6e} ap {ap:.3} ad {ad:.3} sigma {sigma:.2e}"
        );
            x += &dir.dx * ap;
            t += dir.dt * ap;
            y += &dir.dy * ad;
            z += &dir.dz * ad;
            x = symmetrize(&x);
            z = symmetrize(&z);
        }
        Err(SdpError::MaxIterations {
            iterations: opts.max_iter,
            primal: last.0,
            dual: last.1,
            gap: last.2,
        })
    })();
    // A feasible point with a small gap is a valid, slightly conservative
    // answer; the gap bounds how far its objective is from the optimum.
    match (outcome, best) {
        (Err(_), Some((_, infeas, it))) if infeas <= opts.accept_tol && it.4 <= opts.accept_gap => Ok(it),
        (outcome, _) => outcome,
    }
}

type Iterate = (f64, DMatrix<f64>, DVector<f64>, usize, f64);

#[cfg(test)]
mod tests {
    use super::super::backends;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn two_by_two_maxcut_relaxation() {
        // min 2 X12 s.t. X11 = X22 = 1  ->  X12 = -1
        let mut p = SdpProblem::new(2);
        p.c_matrix = Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        p.push(0.0, RowMatrix::RankOne(e(2, 0)), 1.0);
        p.push(0.0, RowMatrix::RankOne(e(2, 1)), 1.0);
        for name in ["ipm", "ipm-dense"] {
            let s = backends()
                .get(name)
                .ok()
                .unwrap()
                .solve(&p, &SdpOptions::default())
                .unwrap();
            assert!((s.objective + 2.0).abs() < 1e-8, "{name}: {}", s.objective);
        }
    }

    #[test]
    fn min_eigenvalue_via_trace_constraint() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let mut p = SdpProblem::new(3);
        p.c_matrix = Some(c.clone());
        p.push(0.0, RowMatrix::Dense(DMatrix::identity(3, 3)), 1.0);
        let s = InteriorPoint { exploit_rank_one: true }
            .solve(&p, &SdpOptions::default())
            .unwrap();
        let lmin = c.symmetric_eigenvalues().min();
        assert!((s.objective - lmin).abs() < 1e-8);
    }

    fn random_scalar_problem(seed: u64, n: usize, m: usize) -> SdpProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // rows n_iᵀ X n_i - g_i t = b_i with b built from a known PD X0 and t0
        let x0 = {
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            &g * g.transpose() + DMatrix::identity(n, n) * 0.1
        };
        let mut p = SdpProblem::new(n);
        p.c_scalar = 1.0;
        for _ in 0..m {
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let g = rng.random_range(0.5..1.5);
            let b = (v.transpose() * &x0 * &v)[0] - g * 0.3;
            p.push(-g, RowMatrix::RankOne(v), b);
        }
        p
    }

    #[test]
    fn rank_one_and_dense_schur_agree() {
        let p = random_scalar_problem(5, 4, 12);
        let opts = SdpOptions::default();
        let a = InteriorPoint { exploit_rank_one: true }.solve(&p, &opts).unwrap();
        let b = InteriorPoint {
            exploit_rank_one: false,
        }
        .solve(&p, &opts)
        .unwrap();
        assert!((a.scalar - b.scalar).abs() < 1e-7 * (1.0 + a.scalar.abs()));
        assert!(a.primal_residual < 1e-8);
        assert!(a.matrix.symmetric_eigenvalues().min() > -1e-9);
    }

    #[test]
    fn duplicate_rows_are_presolved() {
        let mut p = random_scalar_problem(9, 4, 8);
        let dup = p.rows[0].clone();
        p.rows.push(dup.clone());
        let s = InteriorPoint { exploit_rank_one: true }
            .solve(&p, &SdpOptions::default())
            .unwrap();
        assert_eq!(s.rows_kept, 8);
        let mut bad = dup;
        bad.rhs += 1.0;
        p.rows.push(bad);
        assert!(matches!(
            InteriorPoint { exploit_rank_one: true }.solve(&p, &SdpOptions::default()),
            Err(SdpError::Infeasible { .. })
        ));
    }

    #[test]
    fn dual_certificate_is_consistent() {
        let p = random_scalar_problem(13, 3, 9);
        let s = InteriorPoint { exploit_rank_one: true }
            .solve(&p, &SdpOptions::default())
            .unwrap();
        // a^T y = c_t and Z = -sum y_i A_i is PSD
        let ay: f64 = p.rows.iter().zip(&s.dual).map(|(r, y)| r.scalar * y).sum();
        assert!((ay - 1.0).abs() < 1e-8);
        let mut z = DMatrix::zeros(3, 3);
        for (r, y) in p.rows.iter().zip(&s.dual) {
            z -= r.matrix.to_dense() * *y;
        }
        assert!(z.symmetric_eigenvalues().min() > -1e-8);
        let dobj: f64 = p.rows.iter().zip(&s.dual).map(|(r, y)| r.rhs * y).sum();
        assert!((dobj - s.objective).abs() < 1e-7 * (1.0 + s.objective.abs()));
    }
}
