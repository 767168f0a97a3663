//! Negative log-likelihood over all data-bearing nodes, plus ridge and
//! lasso penalties.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKey, NodeId};
use crate::mfnet::{MfNet, PreparedPoints};
use crate::params::{GradVector, ParamLayout, ParamVector, SlotOwner};

/// Observations of one node: `y ≈ f_node(x)` with Gaussian noise of
/// standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    pub node: NodeId,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: f64,
}

impl NodeData {
    pub fn new(node: NodeId, x: DMatrix<f64>, y: DVector<f64>, sigma: f64) -> Result<Self> {
        let d = NodeData { node, x, y, sigma };
        d.check()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidData { node: self.node, reason });
        if self.y.is_empty() {
            return bad("no samples".into());
        }
        if self.x.nrows() != self.y.len() {
            return bad(format!("{} input rows but {} outputs", self.x.nrows(), self.y.len()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }

    /// `(n/2) log 2π + n log σ`, the parameter-independent part of the NLL.
    pub fn nll_constant(&self) -> f64 {
        let n = self.len() as f64;
        0.5 * n * (2.0 * PI).ln() + n * self.sigma.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    #[default]
    None,
    #[serde(alias = "l2")]
    Gaussian,
    #[serde(alias = "l1")]
    Laplace,
}

/// Penalty weights. Items without an explicit weight get half of
/// `default_lambda`, so a single scalar `λ` puts `λ/2` on every slice.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RegConfig {
    pub kind: RegKind,
    pub lambda_node: BTreeMap<NodeId, f64>,
    pub lambda_edge: BTreeMap<EdgeKey, f64>,
    #[serde(alias = "lambda")]
    pub default_lambda: f64,
}

impl RegConfig {
    pub fn none() -> Self {
        RegConfig::default()
    }

    pub fn gaussian(lambda: f64) -> Self {
        RegConfig { kind: RegKind::Gaussian, default_lambda: lambda, ..Default::default() }
    }

    pub fn laplace(lambda: f64) -> Self {
        RegConfig { kind: RegKind::Laplace, default_lambda: lambda, ..Default::default() }
    }

    pub fn check(&self) -> Result<()> {
        let all = std::iter::once(self.default_lambda)
            .chain(self.lambda_node.values().copied())
            .chain(self.lambda_edge.values().copied());
        for w in all {
            if w < 0.0 || w.is_nan() {
                return Err(Error::NegativeLambda(w));
            }
        }
        Ok(())
    }

    /// Weight of every coordinate of a parameter vector with `layout`.
    pub fn weights(&self, layout: &ParamLayout) -> Result<DVector<f64>> {
        self.check()?;
        let fallback = 0.5 * self.default_lambda;
        let mut w = DVector::zeros(layout.total_len());
        for slot in &layout.slots {
            let lambda = match slot.owner {
                SlotOwner::Node { id } => self.lambda_node.get(&id).copied(),
                SlotOwner::Edge { from, to } => self.lambda_edge.get(&EdgeKey { from, to }).copied(),
            }
            .unwrap_or(fallback);
            w.rows_range_mut(slot.range()).fill(lambda);
        }
        Ok(w)
    }
}

/// A fixed set of datasets bound to a network, with basis matrices
/// precomputed per dataset.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    net: &'a MfNet,
    terms: Vec<Term>,
    constant: f64,
}

#[derive(Debug, Clone)]
struct Term {
    prepared: PreparedPoints,
    y: DVector<f64>,
    sigma: f64,
}

impl<'a> Objective<'a> {
    pub fn new(net: &'a MfNet, datasets: &[NodeData]) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::NoData);
        }
        let mut seen = BTreeSet::new();
        for d in datasets {
            d.check()?;
            net.index().pos(d.node)?;
            if !seen.insert(d.node) {
                return Err(Error::DuplicateNodeData(d.node));
            }
        }
        // fixed node-id order keeps reductions reproducible
        let mut sorted: Vec<&NodeData> = datasets.iter().collect();
        sorted.sort_by_key(|d| d.node);
        let mut terms = Vec::with_capacity(sorted.len());
        let mut constant = 0.0;
        for d in sorted {
            terms.push(Term { prepared: net.prepare(d.node, &d.x)?, y: d.y.clone(), sigma: d.sigma });
            constant += d.nll_constant();
        }
        Ok(Objective { net, terms, constant })
    }

    pub fn net(&self) -> &MfNet {
        self.net
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Sum of the parameter-independent terms.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Total NLL including constants.
    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        self.constant + self.misfit(theta)
    }

    /// `sum_k ||y_k - f_k||^2 / (2 σ_k^2)`.
    pub fn misfit(&self, theta: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let cache = self.net.sweep_prepared(theta, &t.prepared);
                (&t.y - cache.value()).norm_squared() / (2.0 * t.sigma * t.sigma)
            })
            .sum()
    }

    /// Total NLL including constants, and its gradient.
    pub fn value_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut grad = DVector::zeros(self.num_params());
        let mut value = self.constant;
        for t in &self.terms {
            let cache = self.net.sweep_prepared(theta, &t.prepared);
            let r = &t.y - cache.value();
            value += r.norm_squared() / (2.0 * t.sigma * t.sigma);
            self.net.backward_into(&cache, &r, t.sigma, &mut grad);
        }
        (value, grad)
    }
}

/// NLL of a single node's data.
pub fn node_nll(net: &MfNet, params: &ParamVector, data: &NodeData) -> Result<f64> {
    data.check()?;
    let f = net.evaluate(params, data.node, &data.x)?;
    let s2 = data.sigma * data.sigma;
    Ok(data.nll_constant() + (&data.y - f).norm_squared() / (2.0 * s2))
}

/// NLL summed over all datasets, with gradient from one backward sweep per
/// data-bearing node.
pub fn total_nll(net: &MfNet, params: &ParamVector, datasets: &[NodeData]) -> Result<(f64, GradVector)> {
    net.check_layout(params)?;
    let obj = Objective::new(net, datasets)?;
    let (v, g) = obj.value_and_grad(&params.values);
    Ok((v, net.params_from(g)?))
}

pub fn l2_penalty(params: &ParamVector, reg: &RegConfig) -> Result<(f64, GradVector)> {
    let w = reg.weights(&params.layout)?;
    let value = w.iter().zip(params.values.iter()).map(|(w, t)| w * t * t).sum();
    let grad = w.component_mul(&params.values) * 2.0;
    Ok((value, ParamVector::new(params.layout.clone(), grad)?))
}

pub fn l1_penalty(params: &ParamVector, reg: &RegConfig) -> Result<f64> {
    let w = reg.weights(&params.layout)?;
    Ok(w.iter().zip(params.values.iter()).map(|(w, t)| w * t.abs()).sum())
}

/// Value of the regularized objective and the gradient of its smooth part.
#[derive(Debug, Clone)]
pub struct RegularizedValue {
    /// NLL plus penalty.
    pub value: f64,
    pub nll: f64,
    pub penalty: f64,
    /// Full gradient for `none`/`gaussian`; gradient of the NLL alone for
    /// `laplace`, whose nonsmooth part is left to the sparse solver.
    pub grad: GradVector,
}

pub fn regularized_objective(
    net: &MfNet,
    params: &ParamVector,
    datasets: &[NodeData],
    reg: &RegConfig,
) -> Result<RegularizedValue> {
    let (nll, mut grad) = total_nll(net, params, datasets)?;
    let penalty = match reg.kind {
        RegKind::None => 0.0,
        RegKind::Gaussian => {
            let (v, g) = l2_penalty(params, reg)?;
            grad.values += g.values;
            v
        }
        RegKind::Laplace => l1_penalty(params, reg)?,
    };
    Ok(RegularizedValue { value: nll + penalty, nll, penalty, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::graph::GraphSpec;
    use crate::params::InitScheme;
    use approx::assert_relative_eq;

    fn linear_net(ids: &[NodeId], edges: &[(NodeId, NodeId)]) -> MfNet {
        let b = BasisSpec::monomial(1, 1);
        MfNet::new(GraphSpec::uniform(ids, edges, *ids.last().unwrap(), b.clone(), b)).unwrap()
    }

    fn col(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    fn ln2pi() -> f64 {
        (2.0 * PI).ln()
    }

    #[test]
    fn node_nll_constants() {
        let net = linear_net(&[1], &[]);
        let p = net.params_from(DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let y = net.evaluate(&p, 1, &x).unwrap();
        let d = NodeData::new(1, x, y, 1.0).unwrap();
        assert_relative_eq!(node_nll(&net, &p, &d).unwrap(), 2.0 * ln2pi(), epsilon = 1e-14);

        let d = NodeData::new(1, col(&[0.0]), DVector::from_vec(vec![2.0]), 1.0).unwrap();
        assert_relative_eq!(node_nll(&net, &p, &d).unwrap(), 0.5 * ln2pi() + 0.5, epsilon = 1e-14);

        let d = NodeData::new(1, col(&[0.0]), DVector::from_vec(vec![1.0]), 2.0).unwrap();
        assert_relative_eq!(node_nll(&net, &p, &d).unwrap(), 0.5 * ln2pi() + 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn data_validation() {
        assert!(NodeData::new(1, col(&[]), DVector::zeros(0), 1.0).is_err());
        assert!(NodeData::new(1, col(&[0.0, 1.0]), DVector::zeros(1), 1.0).is_err());
        assert!(NodeData::new(1, col(&[0.0]), DVector::zeros(1), 0.0).is_err());
    }

    #[test]
    fn zero_params_zero_data() {
        let net = linear_net(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]);
        let p = net.init_params(InitScheme::Zeros, 0);
        let data = vec![
            NodeData::new(1, col(&[0.1, 0.2]), DVector::zeros(2), 0.5).unwrap(),
            NodeData::new(3, col(&[0.1, 0.2, 0.3]), DVector::zeros(3), 2.0).unwrap(),
        ];
        let (v, g) = total_nll(&net, &p, &data).unwrap();
        let expect = ln2pi() + 2.0 * 0.5f64.ln() + 1.5 * ln2pi() + 3.0 * 2f64.ln();
        assert_relative_eq!(v, expect, epsilon = 1e-14);
        assert!(g.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn total_nll_errors() {
        let net = linear_net(&[1, 2], &[(1, 2)]);
        let p = net.init_params(InitScheme::Zeros, 0);
        let d = NodeData::new(1, col(&[0.1]), DVector::zeros(1), 1.0).unwrap();
        assert!(matches!(total_nll(&net, &p, &[d.clone(), d.clone()]), Err(Error::DuplicateNodeData(1))));
        assert!(matches!(total_nll(&net, &p, &[]), Err(Error::NoData)));
        let mut e = d;
        e.node = 4;
        assert!(matches!(total_nll(&net, &p, &[e]), Err(Error::UnknownNode(4))));
    }

    #[test]
    fn root_only_data_matches_single_fidelity() {
        let net = linear_net(&[1, 2], &[(1, 2)]);
        let p = net.init_params(InitScheme::Gaussian { scale: 1.0 }, 3);
        let d = NodeData::new(1, col(&[0.1, -0.4]), DVector::from_vec(vec![1.0, 2.0]), 0.7).unwrap();
        let (v, _) = total_nll(&net, &p, std::slice::from_ref(&d)).unwrap();
        assert_relative_eq!(v, node_nll(&net, &p, &d).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn penalties() {
        let net = linear_net(&[1, 2], &[(1, 2)]);
        let mut p = net.init_params(InitScheme::Zeros, 0);
        p.values.copy_from_slice(&[1.0, 2.0, -1.0, 0.5, 3.0, -4.0]);

        let mut reg = RegConfig::gaussian(0.0);
        reg.lambda_node.insert(1, 0.5);
        let (v, g) = l2_penalty(&p, &reg).unwrap();
        assert_relative_eq!(v, 2.5);
        assert_eq!(g.node(1).unwrap(), &[1.0, 2.0]);
        assert!(g.values.rows(2, 4).iter().all(|&x| x == 0.0));

        let (v, g) = l2_penalty(&p, &RegConfig::gaussian(0.0)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.values.iter().all(|&x| x == 0.0));

        // a single scalar puts lambda/2 on every slice
        let (v, _) = l2_penalty(&p, &RegConfig::gaussian(2.0)).unwrap();
        assert_relative_eq!(v, p.values.norm_squared());

        let mut reg = RegConfig::laplace(0.0);
        reg.lambda_node.insert(1, 1.0);
        let mut q = p.clone();
        q.values.copy_from_slice(&[-1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(l1_penalty(&q, &reg).unwrap(), 3.0);
        assert_eq!(l1_penalty(&q, &RegConfig::laplace(0.0)).unwrap(), 0.0);

        let mut reg = RegConfig::laplace(0.0);
        reg.lambda_edge.insert(EdgeKey { from: 1, to: 2 }, 2.0);
        let mut q = net.init_params(InitScheme::Zeros, 0);
        q.values[4] = 0.5;
        assert_relative_eq!(l1_penalty(&q, &reg).unwrap(), 1.0);

        let mut bad = RegConfig::gaussian(1.0);
        bad.lambda_node.insert(2, -1.0);
        assert!(matches!(l2_penalty(&p, &bad), Err(Error::NegativeLambda(_))));
        assert!(matches!(l1_penalty(&p, &RegConfig::laplace(-1.0)), Err(Error::NegativeLambda(_))));
    }

    #[test]
    fn regularized_composition() {
        let net = linear_net(&[1, 2], &[(1, 2)]);
        let p = net.init_params(InitScheme::Gaussian { scale: 1.0 }, 8);
        let data = vec![NodeData::new(2, col(&[0.1, 0.5, 0.9]), DVector::from_vec(vec![1.0, 0.0, -1.0]), 1.0).unwrap()];
        let (nll, g) = total_nll(&net, &p, &data).unwrap();
        let r = regularized_objective(&net, &p, &data, &RegConfig::none()).unwrap();
        assert_eq!(r.value, nll);
        assert_eq!(r.grad, g);
        let r = regularized_objective(&net, &p, &data, &RegConfig::gaussian(1e-12)).unwrap();
        assert_relative_eq!(r.value, nll, max_relative = 1e-10);
        let r = regularized_objective(&net, &p, &data, &RegConfig::laplace(1.0)).unwrap();
        assert_eq!(r.grad, g);
        assert_relative_eq!(r.penalty, 0.5 * p.values.iter().map(|v| v.abs()).sum::<f64>());
    }

    #[test]
    fn sigma_scaling() {
        let net = linear_net(&[1, 2], &[(1, 2)]);
        let p = net.init_params(InitScheme::Gaussian { scale: 1.0 }, 11);
        let x = col(&[0.1, 0.5, 0.9]);
        let y = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let d1 = NodeData::new(2, x.clone(), y.clone(), 1.0).unwrap();
        let d3 = NodeData::new(2, x, y, 3.0).unwrap();
        let base = node_nll(&net, &p, &d1).unwrap() - d1.nll_constant();
        let scaled = node_nll(&net, &p, &d3).unwrap();
        assert_relative_eq!(scaled, d1.nll_constant() + 3.0 * 3f64.ln() + base / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn additivity_over_disjoint_nodes() {
        let net = linear_net(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]);
        let p = net.init_params(InitScheme::Gaussian { scale: 1.0 }, 12);
        let a = vec![NodeData::new(1, col(&[0.1, 0.2]), DVector::from_vec(vec![0.3, 0.1]), 1.0).unwrap()];
        let b = vec![
            NodeData::new(2, col(&[-0.1]), DVector::from_vec(vec![0.5]), 0.3).unwrap(),
            NodeData::new(3, col(&[0.4, 0.8]), DVector::from_vec(vec![-0.2, 0.9]), 2.0).unwrap(),
        ];
        let all: Vec<NodeData> = a.iter().chain(&b).cloned().collect();
        let (va, ga) = total_nll(&net, &p, &a).unwrap();
        let (vb, gb) = total_nll(&net, &p, &b).unwrap();
        let (v, g) = total_nll(&net, &p, &all).unwrap();
        assert_relative_eq!(v, va + vb, epsilon = 1e-13);
        assert_relative_eq!(g.values, ga.values + gb.values, epsilon = 1e-13);
    }
}
