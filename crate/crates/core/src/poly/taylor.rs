//! Truncated multivariate Taylor series (forward-mode, arbitrary order).
//!
//! A [`Taylor`] value holds the coefficients of a polynomial in the
//! perturbation variables, truncated at the order of its [`TaylorSpace`].
//! Arithmetic and the elementary functions propagate the expansion exactly
//! up to that order, so evaluating a smooth function on seeded variables
//! yields its multivariate Taylor polynomial.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use super::{monomials_up_to, Monomial, MultiPoly};

/// Numeric type the dynamics are written against: plain `f64` or [`Taylor`].
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// A constant in the same space as `self`.
    fn lift(&self, c: f64) -> Self;
    /// Value at the expansion point.
    fn value(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tan(&self) -> Self {
        self.sin() / self.cos()
    }
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn recip(&self) -> Self;
    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn tan(&self) -> Self {
        f64::tan(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn recip(&self) -> Self {
        1.0 / *self
    }
    fn square(&self) -> Self {
        self * self
    }
}

/// Monomial layout and product table shared by all series of one shape.
#[derive(Debug)]
pub struct TaylorSpace {
    nvars: usize,
    order: u32,
    monomials: Vec<Monomial>,
    // (i, j, k): coefficient i times coefficient j contributes to k.
    products: Vec<(u32, u32, u32)>,
}

impl TaylorSpace {
    pub fn new(nvars: usize, order: u32) -> Arc<Self> {
        let monomials = monomials_up_to(nvars, order);
        let index: HashMap<&Monomial, usize> = monomials.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let degrees: Vec<u32> = monomials.iter().map(Monomial::degree).collect();
        let mut products = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            for (j, b) in monomials.iter().enumerate() {
                if degrees[i] + degrees[j] > order {
                    continue;
                }
                let k = index[&a.times(b)];
                products.push((i as u32, j as u32, k as u32));
            }
        }
        Arc::new(TaylorSpace {
            nvars,
            order,
            monomials,
            products,
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Taylor {
    space: Arc<TaylorSpace>,
    coeffs: Vec<f64>,
}

impl Taylor {
    pub fn constant(space: &Arc<TaylorSpace>, c: f64) -> Self {
        let mut coeffs = vec![0.0; space.len()];
        coeffs[0] = c;
        Taylor {
            space: Arc::clone(space),
            coeffs,
        }
    }

    /// `value + dx_index`: the seeded perturbation variable `index`.
    pub fn variable(space: &Arc<TaylorSpace>, index: usize, value: f64) -> Self {
        let mut t = Self::constant(space, value);
        if space.order >= 1 {
            // Degree-one monomials follow the constant, in variable order.
            t.coeffs[1 + index] = 1.0;
        }
        t
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of the degree-one term in variable `index`.
    pub fn first_order(&self, index: usize) -> f64 {
        if self.space.order == 0 {
            0.0
        } else {
            self.coeffs[1 + index]
        }
    }

    pub fn to_poly(&self) -> MultiPoly {
        MultiPoly::from_terms(
            self.space.nvars,
            self.space.monomials.iter().cloned().zip(self.coeffs.iter().copied()),
        )
    }

    fn zeros_like(&self) -> Self {
        Taylor {
            space: Arc::clone(&self.space),
            coeffs: vec![0.0; self.coeffs.len()],
        }
    }

    fn mul_ref(&self, other: &Taylor) -> Taylor {
        debug_assert!(Arc::ptr_eq(&self.space, &other.space));
        let mut out = self.zeros_like();
        let (a, b) = (&self.coeffs, &other.coeffs);
        for &(i, j, k) in &self.space.products {
            let ai = a[i as usize];
            if ai != 0.0 {
                out.coeffs[k as usize] += ai * b[j as usize];
            }
        }
        out
    }

    /// Splits into the constant part and the nilpotent remainder.
    fn split(&self) -> (f64, Taylor) {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        (self.coeffs[0], h)
    }

    /// `sum_j derivs[j] / j! * h^j` with `h` the nilpotent part.
    fn compose(&self, derivs: &[f64]) -> Taylor {
        let (_, h) = self.split();
        let mut out = Taylor::constant(&self.space, derivs[0]);
        let mut power = Taylor::constant(&self.space, 1.0);
        let mut fact = 1.0;
        for (j, &d) in derivs.iter().enumerate().skip(1) {
            power = power.mul_ref(&h);
            fact *= j as f64;
            let c = d / fact;
            if c != 0.0 {
                for (o, p) in out.coeffs.iter_mut().zip(&power.coeffs) {
                    *o += c * p;
                }
            }
        }
        out
    }

    fn order(&self) -> usize {
        self.space.order as usize
    }
}

impl Scalar for Taylor {
    fn lift(&self, c: f64) -> Self {
        Taylor::constant(&self.space, c)
    }

    fn value(&self) -> f64 {
        self.coeffs[0]
    }

    fn sin(&self) -> Self {
        let a = self.coeffs[0];
        let (s, c) = (a.sin(), a.cos());
        let cycle = [s, c, -s, -c];
        let d: Vec<f64> = (0..=self.order()).map(|j| cycle[j % 4]).collect();
        self.compose(&d)
    }

    fn cos(&self) -> Self {
        let a = self.coeffs[0];
        let (s, c) = (a.sin(), a.cos());
        let cycle = [c, -s, -c, s];
        let d: Vec<f64> = (0..=self.order()).map(|j| cycle[j % 4]).collect();
        self.compose(&d)
    }

    fn exp(&self) -> Self {
        let e = self.coeffs[0].exp();
        self.compose(&vec![e; self.order() + 1])
    }

    fn sqrt(&self) -> Self {
        // d^j/da^j a^(1/2) = (1/2)(1/2 - 1)...(1/2 - j + 1) a^(1/2 - j)
        let a = self.coeffs[0];
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut falling = 1.0;
        for j in 0..=self.order() {
            d.push(falling * a.powf(0.5 - j as f64));
            falling *= 0.5 - j as f64;
        }
        self.compose(&d)
    }

    fn recip(&self) -> Self {
        // d^j/da^j a^-1 = (-1)^j j! a^-(j+1)
        let a = self.coeffs[0];
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut fact = 1.0;
        for j in 0..=self.order() {
            if j > 0 {
                fact *= j as f64;
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            d.push(sign * fact / a.powi(j as i32 + 1));
        }
        self.compose(&d)
    }

    fn square(&self) -> Self {
        self.mul_ref(self)
    }
}

impl Add for Taylor {
    type Output = Taylor;
    fn add(mut self, rhs: Taylor) -> Taylor {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
        self
    }
}

impl Sub for Taylor {
    type Output = Taylor;
    fn sub(mut self, rhs: Taylor) -> Taylor {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
        self
    }
}

impl Mul for Taylor {
    type Output = Taylor;
    fn mul(self, rhs: Taylor) -> Taylor {
        self.mul_ref(&rhs)
    }
}

impl Div for Taylor {
    type Output = Taylor;
    fn div(self, rhs: Taylor) -> Taylor {
        self.mul_ref(&rhs.recip())
    }
}

impl Neg for Taylor {
    type Output = Taylor;
    fn neg(mut self) -> Taylor {
        for a in &mut self.coeffs {
            *a = -*a;
        }
        self
    }
}

impl Add<f64> for Taylor {
    type Output = Taylor;
    fn add(mut self, rhs: f64) -> Taylor {
        self.coeffs[0] += rhs;
        self
    }
}

impl Mul<f64> for Taylor {
    type Output = Taylor;
    fn mul(mut self, rhs: f64) -> Taylor {
        for a in &mut self.coeffs {
            *a *= rhs;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_series_to_third_order() {
        let sp = TaylorSpace::new(1, 3);
        let x = Taylor::variable(&sp, 0, 0.0);
        let p = x.sin().to_poly();
        let expect = MultiPoly::from_terms(1, [(Monomial(vec![1]), 1.0), (Monomial(vec![3]), -1.0 / 6.0)]);
        assert!((&p - &expect).max_abs_coefficient() < 1e-15, "{p:?}");
    }

    #[test]
    fn square_is_exact() {
        let sp = TaylorSpace::new(1, 3);
        let x = Taylor::variable(&sp, 0, 0.0);
        let p = x.square().to_poly();
        assert_eq!(p, MultiPoly::from_terms(1, [(Monomial(vec![2]), 1.0)]));
    }

    #[test]
    fn elementary_functions_match_derivatives() {
        // Second-order coefficients are f''(a)/2.
        let sp = TaylorSpace::new(1, 2);
        let a = 0.7;
        let x = Taylor::variable(&sp, 0, a);
        let cases: Vec<(Taylor, [f64; 3])> = vec![
            (x.exp(), [a.exp(), a.exp(), a.exp()]),
            (x.sqrt(), [a.sqrt(), 0.5 / a.sqrt(), -0.25 * a.powf(-1.5)]),
            (x.recip(), [1.0 / a, -1.0 / (a * a), 2.0 / a.powi(3)]),
            (x.cos(), [a.cos(), -a.sin(), -a.cos()]),
            (
                x.tan(),
                [a.tan(), 1.0 / a.cos().powi(2), 2.0 * a.tan() / a.cos().powi(2)],
            ),
        ];
        for (t, d) in cases {
            let c = t.coefficients();
            assert!((c[0] - d[0]).abs() < 1e-14);
            assert!((c[1] - d[1]).abs() < 1e-14);
            assert!((c[2] - d[2] / 2.0).abs() < 1e-13, "{} vs {}", c[2], d[2] / 2.0);
        }
    }

    #[test]
    fn multivariate_product_truncates() {
        let sp = TaylorSpace::new(2, 2);
        let x = Taylor::variable(&sp, 0, 1.0);
        let y = Taylor::variable(&sp, 1, 2.0);
        // (1 + dx)(2 + dy)(1 + dx) = 2 + 4dx + dy + 2dx^2 + 2dxdy (+ dx^2 dy dropped)
        let p = (x.clone() * y * x).to_poly();
        assert_eq!(p.coefficient(&Monomial(vec![0, 0])), 2.0);
        assert_eq!(p.coefficient(&Monomial(vec![1, 0])), 4.0);
        assert_eq!(p.coefficient(&Monomial(vec![0, 1])), 1.0);
        assert_eq!(p.coefficient(&Monomial(vec![2, 0])), 2.0);
        assert_eq!(p.coefficient(&Monomial(vec![1, 1])), 2.0);
        assert_eq!(p.degree(), 2);
    }
}
