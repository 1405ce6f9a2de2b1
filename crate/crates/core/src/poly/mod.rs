//! Sparse multivariate polynomials, truncated Taylor arithmetic, the Hermite
//! Gram basis and a damped Newton solver for polynomial systems.

mod hermite;
mod newton;
mod taylor;

pub use hermite::{hermite_basis, BasisKind, BasisSpec};
pub use newton::{newton_solve, NewtonError, NewtonOptions};
pub use taylor::{Scalar, Taylor, TaylorSpace};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("point has {got} coordinates, polynomial has {expected} variables")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    BadVariable { index: usize, nvars: usize },
}

/// Exponent multi-index of a monomial.
///
/// Ordered graded-lexicographically: lower total degree first, then by
/// exponent vectors with the first variable leading (`x1 < x2` within a
/// degree, so iteration reads `1, x1, x2, x1^2, x1 x2, x2^2, ...`).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u16>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial(e)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    fn times(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All exponent vectors in `nvars` variables with total degree at most
/// `max_degree`, in graded-lex order.
pub fn monomials_up_to(nvars: usize, max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for deg in 0..=max_degree {
        let mut current = vec![0u16; nvars];
        fill_degree(&mut out, &mut current, 0, deg);
    }
    out
}

fn fill_degree(out: &mut Vec<Monomial>, current: &mut Vec<u16>, pos: usize, remaining: u32) {
    let n = current.len();
    if n == 0 {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if pos == n - 1 {
        current[pos] = remaining as u16;
        out.push(Monomial(current.clone()));
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e as u16;
        fill_degree(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

/// Sparse polynomial with real coefficients. Zero coefficients are never
/// stored.
#[derive(Clone, PartialEq)]
pub struct MultiPoly {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl MultiPoly {
    pub fn zero(nvars: usize) -> Self {
        MultiPoly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, index), 1.0);
        p
    }

    /// Linear form `sum_j coeffs[j] * x_j`.
    pub fn linear(coeffs: &[f64]) -> Self {
        let n = coeffs.len();
        let mut p = Self::zero(n);
        for (j, &c) in coeffs.iter().enumerate() {
            p.add_term(Monomial::var(n, j), c);
        }
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Self::zero(nvars);
        for (m, c) in terms {
            assert_eq!(m.nvars(), nvars, "monomial arity mismatch");
            p.add_term(m, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Maximum total degree of a stored term; zero for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Maximum combined degree in the given subset of variables.
    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms
            .keys()
            .map(|m| vars.iter().map(|&v| m.0[v] as u32).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zero(self.nvars);
        }
        MultiPoly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| (m.clone(), c * s))
                .filter(|(_, c)| *c != 0.0)
                .collect(),
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: point.len(),
            });
        }
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &[f64]) -> f64 {
        // Powers are tabulated once per call; cheaper than powi per term.
        let maxdeg = self.degree() as usize;
        let mut powers = vec![1.0; self.nvars * (maxdeg + 1)];
        for (j, &x) in point.iter().enumerate() {
            let row = &mut powers[j * (maxdeg + 1)..(j + 1) * (maxdeg + 1)];
            for e in 1..=maxdeg {
                row[e] = row[e - 1] * x;
            }
        }
        let mut acc = 0.0;
        for (m, &c) in &self.terms {
            let mut t = c;
            for (j, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    t *= powers[j * (maxdeg + 1) + e as usize];
                }
            }
            acc += t;
        }
        acc
    }

    pub fn derivative(&self, var: usize) -> Result<Self, PolyError> {
        if var >= self.nvars {
            return Err(PolyError::BadVariable {
                index: var,
                nvars: self.nvars,
            });
        }
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.0[var];
            if e == 0 {
                continue;
            }
            let mut dm = m.clone();
            dm.0[var] -= 1;
            out.add_term(dm, c * e as f64);
        }
        Ok(out)
    }

    /// Partial derivatives with respect to each variable in `subset`.
    pub fn grad(&self, subset: &[usize]) -> Result<Vec<Self>, PolyError> {
        subset.iter().map(|&v| self.derivative(v)).collect()
    }

    /// Fixes the variables whose entry in `values` is `Some`, returning a
    /// polynomial in the remaining variables (renumbered in order).
    pub fn partial_eval(&self, values: &[Option<f64>]) -> Result<Self, PolyError> {
        if values.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                got: values.len(),
            });
        }
        let kept: Vec<usize> = (0..self.nvars).filter(|&j| values[j].is_none()).collect();
        let mut out = Self::zero(kept.len());
        for (m, &c) in &self.terms {
            let mut coef = c;
            for (j, v) in values.iter().enumerate() {
                if let Some(x) = v {
                    if m.0[j] > 0 {
                        coef *= x.powi(m.0[j] as i32);
                    }
                }
            }
            let e: Vec<u16> = kept.iter().map(|&j| m.0[j]).collect();
            out.add_term(Monomial(e), coef);
        }
        Ok(out)
    }

    /// Re-embeds the polynomial into `nvars` variables, mapping variable `j`
    /// to `mapping[j]`.
    pub fn embed(&self, nvars: usize, mapping: &[usize]) -> Self {
        assert_eq!(mapping.len(), self.nvars);
        let mut out = Self::zero(nvars);
        for (m, &c) in &self.terms {
            let mut e = vec![0u16; nvars];
            for (j, &k) in mapping.iter().enumerate() {
                e[k] += m.0[j];
            }
            out.add_term(Monomial(e), c);
        }
        out
    }

    /// Drops all terms of total degree above `degree`.
    pub fn truncate(&self, degree: u32) -> Self {
        MultiPoly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.degree() <= degree)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    fn combine(&self, other: &Self, sign: f64) -> Self {
        assert_eq!(self.nvars, other.nvars, "polynomial arity mismatch");
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), sign * c);
        }
        out
    }

    fn product(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars, "polynomial arity mismatch");
        let mut out = Self::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.times(mb), ca * cb);
            }
        }
        out
    }
}

impl fmt::Debug for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (j, &e) in m.0.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{j}")?,
                    _ => write!(f, "*x{j}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

impl Add for &MultiPoly {
    type Output = MultiPoly;
    fn add(self, rhs: &MultiPoly) -> MultiPoly {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &MultiPoly {
    type Output = MultiPoly;
    fn sub(self, rhs: &MultiPoly) -> MultiPoly {
        self.combine(rhs, -1.0)
    }
}

impl Mul for &MultiPoly {
    type Output = MultiPoly;
    fn mul(self, rhs: &MultiPoly) -> MultiPoly {
        self.product(rhs)
    }
}

impl Neg for &MultiPoly {
    type Output = MultiPoly;
    fn neg(self) -> MultiPoly {
        self.scale(-1.0)
    }
}

impl Add for MultiPoly {
    type Output = MultiPoly;
    fn add(self, rhs: MultiPoly) -> MultiPoly {
        &self + &rhs
    }
}

impl Sub for MultiPoly {
    type Output = MultiPoly;
    fn sub(self, rhs: MultiPoly) -> MultiPoly {
        &self - &rhs
    }
}

impl Mul for MultiPoly {
    type Output = MultiPoly;
    fn mul(self, rhs: MultiPoly) -> MultiPoly {
        &self * &rhs
    }
}

/// Evaluates a vector of polynomials at one point.
pub fn eval_all(polys: &[MultiPoly], point: &[f64]) -> Result<Vec<f64>, PolyError> {
    polys.iter().map(|p| p.eval(point)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poly(rng: &mut impl Rng, nvars: usize, degree: u32, nterms: usize) -> MultiPoly {
        let basis = monomials_up_to(nvars, degree);
        let mut p = MultiPoly::zero(nvars);
        for _ in 0..nterms {
            let m = basis[rng.random_range(0..basis.len())].clone();
            p.add_term(m, rng.random_range(-2.0..2.0));
        }
        p
    }

    // Independent of eval_unchecked: powi per factor, summed in map order.
    fn naive_eval(p: &MultiPoly, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (m, c) in p.terms() {
            let mut t = c;
            for (j, &e) in m.0.iter().enumerate() {
                for _ in 0..e {
                    t *= z[j];
                }
            }
            s += t;
        }
        s
    }

    #[test]
    fn eval_small_examples() {
        // x1^2 + 2 x2 at (1, 3)
        let p = &(&MultiPoly::var(2, 0) * &MultiPoly::var(2, 0)) + &MultiPoly::var(2, 1).scale(2.0);
        assert_eq!(p.eval(&[1.0, 3.0]).unwrap(), 7.0);
        assert_eq!(MultiPoly::zero(3).eval(&[1.0, -2.0, 5.0]).unwrap(), 0.0);
        assert_eq!(
            p.eval(&[1.0]),
            Err(PolyError::DimensionMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn eval_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_poly(&mut rng, 4, 4, 20);
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let a = p.eval(&z).unwrap();
            let b = naive_eval(&p, &z);
            assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn grad_examples() {
        let x1 = MultiPoly::var(2, 0);
        let x2 = MultiPoly::var(2, 1);
        let p = &(&x1 * &x1) * &x2;
        let g = p.grad(&[0]).unwrap();
        assert_eq!(g[0], (&x1 * &x2).scale(2.0));
        let c = MultiPoly::constant(2, 3.5);
        assert!(c.grad(&[0, 1]).unwrap().iter().all(MultiPoly::is_zero));
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_poly(&mut rng, 3, 4, 25);
        let g = p.grad(&[0, 1, 2]).unwrap();
        for _ in 0..5 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            for j in 0..3 {
                let h = 1e-5;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let fd = (p.eval(&zp).unwrap() - p.eval(&zm).unwrap()) / (2.0 * h);
                let exact = g[j].eval(&z).unwrap();
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
            }
        }
    }

    #[test]
    fn monomial_order_is_graded() {
        let ms = monomials_up_to(2, 2);
        let expect = vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
        assert_eq!(ms.iter().map(|m| m.0.clone()).collect::<Vec<_>>(), expect);
        let mut sorted = ms.clone();
        sorted.sort();
        assert_eq!(sorted, ms);
    }

    #[test]
    fn partial_eval_and_embed() {
        // p = x0 * x1^2 + x2
        let x = |i| MultiPoly::var(3, i);
        let p = &(&x(0) * &(&x(1) * &x(1))) + &x(2);
        let q = p.partial_eval(&[Some(2.0), None, Some(1.0)]).unwrap();
        assert_eq!(q.nvars(), 1);
        assert_eq!(q.eval(&[3.0]).unwrap(), 2.0 * 9.0 + 1.0);
        let back = q.embed(3, &[1]);
        assert_eq!(back.eval(&[0.0, 3.0, 0.0]).unwrap(), 19.0);
    }

    #[test]
    fn no_zero_terms_stored() {
        let x = MultiPoly::var(1, 0);
        let d = &x - &x;
        assert!(d.is_zero());
        assert_eq!(d.num_terms(), 0);
        assert_eq!(d.degree(), 0);
    }

    proptest! {
        #[test]
        fn product_evaluates_as_product(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_poly(&mut rng, 3, 3, 8);
            let q = random_poly(&mut rng, 3, 3, 8);
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = (&p * &q).eval(&z).unwrap();
            let rhs = p.eval(&z).unwrap() * q.eval(&z).unwrap();
            let scale = p.eval(&z).unwrap().abs() * q.eval(&z).unwrap().abs()
                + p.max_abs_coefficient() * q.max_abs_coefficient();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }
    }
}
