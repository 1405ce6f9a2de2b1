use serde::{Deserialize, Serialize};

use super::{monomials_up_to, Monomial, MultiPoly};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// Tensor products of probabilists' Hermite polynomials.
    Hermite,
    Monomial,
}

/// Gram basis description: all tensor-product elements of total degree at
/// most `max_degree` in `nvars` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    pub nvars: usize,
    pub max_degree: u32,
    pub kind: BasisKind,
    exponents: Vec<Monomial>,
}

impl BasisSpec {
    pub fn new(nvars: usize, max_degree: u32, kind: BasisKind) -> Self {
        BasisSpec {
            nvars,
            max_degree,
            kind,
            exponents: monomials_up_to(nvars, max_degree),
        }
    }

    pub fn hermite(nvars: usize, max_degree: u32) -> Self {
        Self::new(nvars, max_degree, BasisKind::Hermite)
    }

    /// `C(nvars + max_degree, max_degree)`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Monomial] {
        &self.exponents
    }

    /// Values of every basis element at `point`, in basis order.
    pub fn evaluate(&self, point: &[f64]) -> Vec<f64> {
        assert_eq!(point.len(), self.nvars);
        let d = self.max_degree as usize;
        let mut table = vec![0.0; self.nvars * (d + 1)];
        for (j, &x) in point.iter().enumerate() {
            let row = &mut table[j * (d + 1)..(j + 1) * (d + 1)];
            univariate_values(self.kind, x, row);
        }
        self.exponents
            .iter()
            .map(|m| {
                m.0.iter()
                    .enumerate()
                    .map(|(j, &e)| table[j * (d + 1) + e as usize])
                    .product()
            })
            .collect()
    }
}

fn univariate_values(kind: BasisKind, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for n in 1..out.len().saturating_sub(1) {
        out[n + 1] = match kind {
            BasisKind::Hermite => x * out[n] - n as f64 * out[n - 1],
            BasisKind::Monomial => x * out[n],
        };
    }
}

/// Univariate probabilists' Hermite polynomials He_0..=He_degree in one
/// variable, as coefficient vectors (index = power).
fn hermite_coefficients(degree: usize) -> Vec<Vec<f64>> {
    let mut he: Vec<Vec<f64>> = vec![vec![1.0]];
    if degree >= 1 {
        he.push(vec![0.0, 1.0]);
    }
    for n in 1..degree {
        let mut next = vec![0.0; n + 2];
        for (k, &c) in he[n].iter().enumerate() {
            next[k + 1] += c;
        }
        for (k, &c) in he[n - 1].iter().enumerate() {
            next[k] -= n as f64 * c;
        }
        he.push(next);
    }
    he
}

/// The basis elements of `spec` as explicit polynomials, in basis order.
pub fn hermite_basis(spec: &BasisSpec) -> Vec<MultiPoly> {
    let n = spec.nvars;
    let d = spec.max_degree as usize;
    let uni: Vec<Vec<f64>> = match spec.kind {
        BasisKind::Hermite => hermite_coefficients(d),
        BasisKind::Monomial => (0..=d)
            .map(|k| {
                let mut v = vec![0.0; k + 1];
                v[k] = 1.0;
                v
            })
            .collect(),
    };
    spec.exponents
        .iter()
        .map(|m| {
            let mut p = MultiPoly::constant(n, 1.0);
            for (j, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut factor = MultiPoly::zero(n);
                for (k, &c) in uni[e as usize].iter().enumerate() {
                    let mut mono = vec![0u16; n];
                    mono[j] = k as u16;
                    factor.add_term(Monomial(mono), c);
                }
                p = &p * &factor;
            }
            p
        })
        .collect()
}
