use nalgebra::{DMatrix, DVector};

use super::{RowMatrix, SdpError, SdpProblem};

/// Result of removing linearly dependent rows.
#[derive(Clone, Debug)]
pub struct Presolved {
    /// Indices of the retained rows, in pivot order.
    pub kept: Vec<usize>,
    /// Largest disagreement of a dropped row with the retained ones.
    pub inconsistency: f64,
}

/// Gram matrix `<A_i, A_j> + a_i a_j` of the constraint rows.
pub(crate) fn row_gram(problem: &SdpProblem) -> DMatrix<f64> {
    let m = problem.rows.len();
    if problem.is_rank_one() {
        let n = DMatrix::from_fn(problem.dim, m, |r, c| match &problem.rows[c].matrix {
            RowMatrix::RankOne(v) => v[r],
            RowMatrix::Dense(_) => unreachable!(),
        });
        let g = n.transpose() * &n;
        DMatrix::from_fn(m, m, |i, j| {
            g[(i, j)] * g[(i, j)] + problem.rows[i].scalar * problem.rows[j].scalar
        })
    } else {
        let dense: Vec<DMatrix<f64>> = problem.rows.iter().map(|r| r.matrix.to_dense()).collect();
        DMatrix::from_fn(m, m, |i, j| {
            dense[i].dot(&dense[j]) + problem.rows[i].scalar * problem.rows[j].scalar
        })
    }
}

/// Greedy pivoted Cholesky of a PSD matrix. Returns the pivot order and
/// the factor columns (`L` restricted to the pivots, `m x rank`).
pub(crate) fn pivoted_cholesky(g: &DMatrix<f64>, rel_tol: f64) -> (Vec<usize>, DMatrix<f64>) {
    let m = g.nrows();
    let mut diag: Vec<f64> = (0..m).map(|i| g[(i, i)]).collect();
    let scale = diag.iter().copied().fold(0.0, f64::max);
    let mut l = DMatrix::<f64>::zeros(m, m.min(g.ncols()));
    let mut pivots = Vec::new();
    let mut used = vec![false; m];
    for col in 0..m {
        let (p, &d) = match diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
        {
            Some(x) => x,
            None => break,
        };
        if !(d > rel_tol * scale) || scale == 0.0 {
            break;
        }
        used[p] = true;
        pivots.push(p);
        let piv = d.sqrt();
        for i in 0..m {
            if used[i] && i != p {
                continue;
            }
            let mut s = g[(i, p)];
            for c in 0..col {
                s -= l[(i, c)] * l[(p, c)];
            }
            l[(i, col)] = if i == p { piv } else { s / piv };
        }
        for i in 0..m {
            if !used[i] {
                diag[i] -= l[(i, col)] * l[(i, col)];
            }
        }
    }
    let r = pivots.len();
    (pivots, l.columns(0, r).into_owned())
}

/// Drops rows that are linearly dependent on earlier pivots and checks that
/// their right-hand sides agree; disagreement beyond `consistency_tol`
/// means no `(t, X)` can satisfy all rows.
pub fn presolve(problem: &SdpProblem, rel_tol: f64, consistency_tol: f64) -> Result<Presolved, SdpError> {
    let g = row_gram(problem);
    let (kept, l) = pivoted_cholesky(&g, rel_tol);
    let m = problem.rows.len();
    let mut inconsistency = 0.0f64;
    if kept.len() < m {
        let r = kept.len();
        let lk = DMatrix::from_fn(r, r, |i, j| l[(kept[i], j)]);
        let bk = DVector::from_iterator(r, kept.iter().map(|&i| problem.rows[i].rhs));
        // b_j ≈ l_jᵀ (L_K⁻¹ b_K) for a dependent row j.
        let z = lk
            .solve_lower_triangular(&bk)
            .ok_or_else(|| SdpError::Numerical("presolve factor is singular".into()))?;
        let bmax = problem.rows.iter().map(|r| r.rhs.abs()).fold(1.0, f64::max);
        let mut is_kept = vec![false; m];
        for &i in &kept {
            is_kept[i] = true;
        }
        for j in (0..m).filter(|j| !is_kept[*j]) {
            let pred: f64 = (0..r).map(|c| l[(j, c)] * z[c]).sum();
            inconsistency = inconsistency.max((problem.rows[j].rhs - pred).abs() / bmax);
        }
        if inconsistency > consistency_tol {
            return Err(SdpError::Infeasible { inconsistency });
        }
    }
    Ok(Presolved { kept, inconsistency })
}
