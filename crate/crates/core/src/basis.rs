//! Total-degree polynomial bases.
//!
//! Columns follow graded-lexicographic order of the exponent multi-indices:
//! all indices of total degree 0, then 1, and so on; within a degree the
//! exponent of `x1` decreases first. For `dim = 2, degree = 2` this gives
//! `[1, x1, x2, x1^2, x1 x2, x2^2]`. This ordering is part of the parameter
//! file contract.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Monomial,
    Legendre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub degree: usize,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

impl BasisSpec {
    pub fn monomial(degree: usize, dim: usize) -> Self {
        BasisSpec { kind: BasisKind::Monomial, degree, dim, bounds: None }
    }

    pub fn legendre(degree: usize, bounds: Vec<[f64; 2]>) -> Self {
        BasisSpec { kind: BasisKind::Legendre, degree, dim: bounds.len(), bounds: Some(bounds) }
    }

    /// `C(degree + dim, dim)`.
    pub fn cardinality(&self) -> usize {
        binomial(self.degree + self.dim, self.dim)
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// A validated, immutable polynomial basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    spec: BasisSpec,
    exponents: Vec<Vec<usize>>,
}

pub fn make_basis(spec: &BasisSpec) -> Result<Basis> {
    Basis::new(spec.clone())
}

impl Basis {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::InvalidBasis("dim must be at least 1".into()));
        }
        if let Some(bounds) = &spec.bounds {
            if bounds.len() != spec.dim {
                return Err(Error::InvalidBasis(format!(
                    "{} bounds given for dim {}",
                    bounds.len(),
                    spec.dim
                )));
            }
            for [lo, hi] in bounds {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidBasis(format!("bad interval [{lo}, {hi}]")));
                }
            }
        } else if spec.kind == BasisKind::Legendre {
            return Err(Error::InvalidBasis("legendre basis requires bounds".into()));
        }
        let exponents = graded_lex_exponents(spec.dim, spec.degree);
        debug_assert_eq!(exponents.len(), spec.cardinality());
        Ok(Basis { spec, exponents })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn kind(&self) -> BasisKind {
        self.spec.kind
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn degree(&self) -> usize {
        self.spec.degree
    }

    pub fn cardinality(&self) -> usize {
        self.exponents.len()
    }

    /// Exponent multi-index of every column, in column order.
    pub fn exponents(&self) -> &[Vec<usize>] {
        &self.exponents
    }

    /// Evaluate every basis function at every row of `points` (n x d).
    pub fn eval(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != self.spec.dim {
            return Err(Error::DimensionMismatch { expected: self.spec.dim, got: points.ncols() });
        }
        let n = points.nrows();
        let p = self.spec.degree;
        let mut out = DMatrix::zeros(n, self.cardinality());
        // per-dimension univariate tables, reused across columns
        let mut table = vec![vec![0.0; p + 1]; self.spec.dim];
        for i in 0..n {
            for (k, row) in table.iter_mut().enumerate() {
                let x = self.map_coordinate(k, points[(i, k)]);
                self.univariate(x, row);
            }
            for (j, alpha) in self.exponents.iter().enumerate() {
                out[(i, j)] = alpha.iter().enumerate().map(|(k, &a)| table[k][a]).product();
            }
        }
        Ok(out)
    }

    /// Evaluate the expansion `sum_j coeffs[j] * v_j(x)` at each row.
    pub fn eval_expansion(&self, points: &DMatrix<f64>, coeffs: &[f64]) -> Result<DVector<f64>> {
        if coeffs.len() != self.cardinality() {
            return Err(Error::LengthMismatch(coeffs.len(), self.cardinality()));
        }
        let v = self.eval(points)?;
        Ok(v * DVector::from_column_slice(coeffs))
    }

    fn map_coordinate(&self, k: usize, x: f64) -> f64 {
        match (&self.spec.kind, &self.spec.bounds) {
            (BasisKind::Legendre, Some(b)) => {
                let [lo, hi] = b[k];
                2.0 * (x - lo) / (hi - lo) - 1.0
            }
            _ => x,
        }
    }

    fn univariate(&self, x: f64, row: &mut [f64]) {
        row[0] = 1.0;
        if row.len() == 1 {
            return;
        }
        row[1] = x;
        match self.spec.kind {
            BasisKind::Monomial => {
                for m in 2..row.len() {
                    row[m] = row[m - 1] * x;
                }
            }
            BasisKind::Legendre => {
                // Bonnet recursion
                for m in 1..row.len() - 1 {
                    let mf = m as f64;
                    row[m + 1] = ((2.0 * mf + 1.0) * x * row[m] - mf * row[m - 1]) / (mf + 1.0);
                }
            }
        }
    }
}

/// All exponent vectors of length `dim` with total degree at most `degree`,
/// in graded-lexicographic order.
pub fn graded_lex_exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn fill(remaining: usize, slot: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slot + 1 == current.len() {
            current[slot] = remaining;
            out.push(current.clone());
            return;
        }
        for a in (0..=remaining).rev() {
            current[slot] = a;
            fill(remaining - a, slot + 1, current, out);
        }
    }
    let mut out = Vec::new();
    let mut current = vec![0; dim];
    for total in 0..=degree {
        fill(total, 0, &mut current, &mut out);
    }
    out
}
