//! Sparse multivariate polynomials in the monomial basis.

use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector};

/// Coefficients keyed by exponent multi-index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<Vec<usize>, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, terms: BTreeMap::new() }
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Vec<usize>, f64)>) -> Self {
        let mut p = Polynomial::zero(dim);
        for (alpha, c) in terms {
            assert_eq!(alpha.len(), dim, "exponent length must equal dim");
            *p.terms.entry(alpha).or_insert(0.0) += c;
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &BTreeMap<Vec<usize>, f64> {
        &self.terms
    }

    pub fn coefficient(&self, alpha: &[usize]) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    /// Highest total degree among nonzero coefficients; 0 for the zero
    /// polynomial.
    pub fn degree(&self) -> usize {
        self.degree_above(0.0)
    }

    /// Highest total degree among coefficients with magnitude above `tol`.
    pub fn degree_above(&self, tol: f64) -> usize {
        self.terms
            .iter()
            .filter(|(_, c)| c.abs() > tol)
            .map(|(a, _)| a.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(mut self, s: f64) -> Self {
        for c in self.terms.values_mut() {
            *c *= s;
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(alpha, c)| c * alpha.iter().zip(x).map(|(&a, &xi)| xi.powi(a as i32)).product::<f64>())
            .sum()
    }

    pub fn eval_points(&self, points: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            points.nrows(),
            (0..points.nrows()).map(|i| {
                let row: Vec<f64> = points.row(i).iter().copied().collect();
                self.eval(&row)
            }),
        )
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;

    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (alpha, c) in &rhs.terms {
            *out.terms.entry(alpha.clone()).or_insert(0.0) += c;
        }
        out
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;

    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (a, ca) in &self.terms {
            for (b, cb) in &rhs.terms {
                let alpha: Vec<usize> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                *out.terms.entry(alpha).or_insert(0.0) += ca * cb;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_linears() {
        // (1 + 2x)(3 - x) = 3 + 5x - 2x^2
        let a = Polynomial::from_terms(1, [(vec![0], 1.0), (vec![1], 2.0)]);
        let b = Polynomial::from_terms(1, [(vec![0], 3.0), (vec![1], -1.0)]);
        let p = &a * &b;
        assert_eq!(p.coefficient(&[0]), 3.0);
        assert_eq!(p.coefficient(&[1]), 5.0);
        assert_eq!(p.coefficient(&[2]), -2.0);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.eval(&[2.0]), 3.0 + 10.0 - 8.0);
        let s = &p + &a;
        assert_eq!(s.coefficient(&[1]), 7.0);
    }

    #[test]
    fn zero_degree() {
        assert_eq!(Polynomial::zero(2).degree(), 0);
        let p = Polynomial::from_terms(2, [(vec![1, 1], 0.0), (vec![1, 0], 1.0)]);
        assert_eq!(p.degree(), 1);
    }
}
