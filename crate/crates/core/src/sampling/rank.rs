use super::SamplingError;

/// Relative squared distance below which a new row counts as dependent.
pub const RANK_TOL: f64 = 1e-11;

/// Incremental rank of rows `(vec(n nᵀ), a)` in the space that the Gram
/// equality constraints live in, tracked through their inner products
/// `(n_i·n_j)² + a_i a_j` and a growing Cholesky factor.
#[derive(Clone, Debug, Default)]
pub struct RowSpace {
    vectors: Vec<Vec<f64>>,
    scalars: Vec<f64>,
    l: Vec<Vec<f64>>,
    tol: f64,
}

impl RowSpace {
    pub fn new(tol: f64) -> Self {
        RowSpace {
            tol,
            ..Default::default()
        }
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    fn inner(a: &[f64], sa: f64, b: &[f64], sb: f64) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d * d + sa * sb
    }

    /// Adds the row if it is independent of the current span.
    pub fn push(&mut self, n: &[f64], a: f64) -> bool {
        let gjj = Self::inner(n, a, n, a);
        if gjj == 0.0 {
            return false;
        }
        let r = self.rank();
        let mut l = vec![0.0; r + 1];
        let mut sq = 0.0;
        for k in 0..r {
            let mut s = Self::inner(&self.vectors[k], self.scalars[k], n, a);
            for c in 0..k {
                s -= self.l[k][c] * l[c];
            }
            l[k] = s / self.l[k][k];
            sq += l[k] * l[k];
        }
        let d = gjj - sq;
        if d > self.tol * gjj {
            l[r] = d.sqrt();
            self.l.push(l);
            self.vectors.push(n.to_vec());
            self.scalars.push(a);
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankEstimate {
    /// Smallest prefix of the probe sequence reaching the saturated rank.
    pub count: usize,
    pub rank: usize,
    /// Rows drawn while establishing saturation.
    pub probed: usize,
}

/// Grows the sample count by 25% at a time from `basis_len` until the rank
/// of the sampled constraint rows is unchanged twice in a row.
///
/// `probe` returns the basis values `ñ` at one sample and the coefficient of
/// the free scalar in that sample's row. Fails once more than ten times the
/// number of Gram parameters have been drawn.
pub fn estimate_min_samples(
    basis_len: usize,
    probe: &mut dyn FnMut() -> Result<(Vec<f64>, f64), SamplingError>,
) -> Result<RankEstimate, SamplingError> {
    let limit = 10 * (1 + basis_len * (basis_len + 1) / 2);
    let mut space = RowSpace::new(RANK_TOL);
    let mut drawn = 0usize;
    let mut last_gain = 0usize;
    let mut target = basis_len.max(1);
    let mut prev_rank: Option<usize> = None;
    let mut unchanged = 0;
    loop {
        while drawn < target {
            let (n, a) = probe()?;
            drawn += 1;
            if space.push(&n, a) {
                last_gain = drawn;
            }
        }
        if prev_rank == Some(space.rank()) {
            unchanged += 1;
            if unchanged >= 2 {
                return Ok(RankEstimate {
                    count: last_gain,
                    rank: space.rank(),
                    probed: drawn,
                });
            }
        } else {
            unchanged = 0;
        }
        prev_rank = Some(space.rank());
        target = (target + 1).max((target as f64 * 1.25).ceil() as usize);
        if target > limit {
            return Err(SamplingError::NoSaturation {
                limit,
                rank: space.rank(),
                count: drawn,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::BasisSpec;

    #[test]
    fn two_point_variety_saturates_at_two() {
        let spec = BasisSpec::hermite(1, 2);
        let a = 1.3;
        let mut sign = 1.0;
        let mut probe = || {
            sign = -sign;
            Ok((spec.evaluate(&[sign * a]), a * a))
        };
        let est = estimate_min_samples(spec.len(), &mut probe).unwrap();
        assert_eq!((est.count, est.rank), (2, 2));
    }

    #[test]
    fn duplicate_rows_add_no_rank() {
        let mut s = RowSpace::new(RANK_TOL);
        assert!(s.push(&[1.0, 2.0], 0.5));
        assert!(!s.push(&[1.0, 2.0], 0.5));
        assert!(!s.push(&[-1.0, -2.0], 0.5));
        assert!(s.push(&[1.0, 0.0], 0.0));
    }
}
