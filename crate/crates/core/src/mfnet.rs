//! The multifidelity network: node bias functions and edge weighting
//! functions on a DAG, evaluated with a breadth-first forward sweep and
//! differentiated with a breadth-first backward sweep.
//!
//! Every node satisfies
//!
//! ```text
//! f_k(x) = sum_{j in Pa(k)} rho_jk(x) f_j(x) + delta_k(x)
//! rho_jk(x) = W_jk(x) alpha_jk,  delta_k(x) = V_k(x) beta_k
//! ```
//!
//! The forward sweep for node `k` visits only `An(k) ∪ {k}` and caches the
//! partials needed by the backward sweep. A node is enqueued only once all of
//! its parents have contributed; during the backward sweep a node is
//! enqueued only once all of its in-scope children have passed back their
//! chain-rule factors.

use std::collections::VecDeque;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::basis::{Basis, BasisKind};
use crate::error::{Error, Result};
use crate::graph::{validate, GraphSpec, NodeId, TraversalIndex};
use crate::params::{init_params, GradVector, InitScheme, ParamLayout, ParamSlot, ParamVector, SlotOwner};
use crate::poly::Polynomial;

/// A validated network: graph structure, bases and parameter layout.
#[derive(Debug, Clone)]
pub struct MfNet {
    spec: GraphSpec,
    index: TraversalIndex,
    node_bases: Vec<Basis>,
    edge_bases: Vec<Basis>,
    node_slices: Vec<Range<usize>>,
    edge_slices: Vec<Range<usize>>,
    layout: ParamLayout,
    dim: usize,
}

impl MfNet {
    pub fn new(spec: GraphSpec) -> Result<Self> {
        let index = validate(&spec)?;
        let mut node_bases = Vec::with_capacity(index.len());
        for &id in index.ids() {
            let node = spec.nodes.iter().find(|n| n.id == id).expect("validated id");
            node_bases.push(Basis::new(node.basis.clone())?);
        }
        let mut edge_bases = Vec::new();
        for key in index.edge_keys() {
            let edge = spec.edges.iter().find(|e| e.from == key.from && e.to == key.to).expect("validated edge");
            edge_bases.push(Basis::new(edge.basis.clone())?);
        }
        let dim = node_bases[0].dim();
        if let Some(b) = node_bases.iter().chain(&edge_bases).find(|b| b.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: b.dim() });
        }

        let mut slots = Vec::new();
        let mut offset = 0;
        let mut node_slices = Vec::new();
        for (pos, basis) in node_bases.iter().enumerate() {
            let len = basis.cardinality();
            slots.push(ParamSlot { owner: SlotOwner::Node { id: index.id(pos) }, offset, len });
            node_slices.push(offset..offset + len);
            offset += len;
        }
        let mut edge_slices = Vec::new();
        for (key, basis) in index.edge_keys().into_iter().zip(&edge_bases) {
            let len = basis.cardinality();
            slots.push(ParamSlot { owner: SlotOwner::Edge { from: key.from, to: key.to }, offset, len });
            edge_slices.push(offset..offset + len);
            offset += len;
        }

        Ok(MfNet {
            spec,
            index,
            node_bases,
            edge_bases,
            node_slices,
            edge_slices,
            layout: ParamLayout { slots },
            dim,
        })
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn index(&self) -> &TraversalIndex {
        &self.index
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total_len()
    }

    /// Input dimension shared by every basis.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_basis(&self, id: NodeId) -> Result<&Basis> {
        Ok(&self.node_bases[self.index.pos(id)?])
    }

    pub fn edge_basis(&self, from: NodeId, to: NodeId) -> Result<&Basis> {
        let e = self.edge_position(from, to)?;
        Ok(&self.edge_bases[e])
    }

    fn edge_position(&self, from: NodeId, to: NodeId) -> Result<usize> {
        let (f, t) = (self.index.pos(from)?, self.index.pos(to)?);
        self.index
            .edge_index(f, t)
            .ok_or_else(|| Error::LayoutMismatch(format!("no edge {from} -> {to}")))
    }

    /// Largest polynomial degree over all node and edge bases.
    pub fn max_degree(&self) -> usize {
        self.node_bases.iter().chain(&self.edge_bases).map(Basis::degree).max().unwrap_or(0)
    }

    pub fn init_params(&self, scheme: InitScheme, seed: u64) -> ParamVector {
        init_params(&self.layout, scheme, seed)
    }

    pub fn params_from(&self, values: DVector<f64>) -> Result<ParamVector> {
        ParamVector::new(self.layout.clone(), values)
    }

    pub fn check_layout(&self, params: &ParamVector) -> Result<()> {
        if params.layout != self.layout {
            return Err(Error::LayoutMismatch("parameter slots differ from the graph's".into()));
        }
        Ok(())
    }

    /// Basis matrices of every node and edge reachable from `node` at
    /// `points`. These do not depend on parameters and can be reused across
    /// objective evaluations.
    pub fn prepare(&self, node: NodeId, points: &DMatrix<f64>) -> Result<PreparedPoints> {
        let k = self.index.pos(node)?;
        if points.nrows() == 0 {
            return Err(Error::EmptyPoints);
        }
        if points.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: points.ncols() });
        }
        let mut in_scope = vec![false; self.index.len()];
        in_scope[k] = true;
        for &a in self.index.ancestor_positions(k) {
            in_scope[a] = true;
        }
        let mut node_mats = vec![None; self.index.len()];
        for (pos, flag) in in_scope.iter().enumerate() {
            if *flag {
                node_mats[pos] = Some(self.node_bases[pos].eval(points)?);
            }
        }
        let mut edge_mats = vec![None; self.edge_bases.len()];
        for (e, &(f, t)) in self.index.edge_positions().iter().enumerate() {
            if in_scope[f] && in_scope[t] {
                edge_mats[e] = Some(self.edge_bases[e].eval(points)?);
            }
        }
        Ok(PreparedPoints { node: k, n: points.nrows(), in_scope, node_mats, edge_mats })
    }

    pub fn forward_sweep(&self, params: &ParamVector, node: NodeId, points: &DMatrix<f64>) -> Result<SweepCache> {
        self.check_layout(params)?;
        let prepared = self.prepare(node, points)?;
        Ok(self.sweep_prepared(&params.values, &prepared))
    }

    /// Forward sweep over precomputed basis matrices.
    pub fn sweep_prepared(&self, theta: &DVector<f64>, prep: &PreparedPoints) -> SweepCache {
        let nodes = self.index.len();
        let edges = self.edge_bases.len();
        let mut cache = SweepCache {
            node: prep.node,
            n: prep.n,
            order: Vec::new(),
            z: vec![None; nodes],
            dz_node: vec![None; nodes],
            dz_edge: vec![None; edges],
            edge_products: vec![None; edges],
            edge_weights: vec![None; edges],
        };
        let mut queue = VecDeque::new();
        for pos in 0..nodes {
            if let Some(v) = &prep.node_mats[pos] {
                let beta = theta.rows_range(self.node_slices[pos].clone());
                cache.z[pos] = Some(v * beta);
                cache.dz_node[pos] = Some(v.clone());
                if self.index.parent_positions(pos).is_empty() {
                    queue.push_back(pos);
                }
            }
        }
        let mut pending: Vec<usize> = (0..nodes).map(|p| self.index.parent_positions(p).len()).collect();
        while let Some(l) = queue.pop_front() {
            cache.order.push(l);
            let z_l = cache.z[l].clone().expect("enqueued nodes are evaluated");
            for &c in self.index.child_positions(l) {
                if !prep.in_scope[c] {
                    continue;
                }
                let e = self.index.edge_index(l, c).expect("child edge");
                let w = prep.edge_mats[e].as_ref().expect("in-scope edge");
                let alpha = theta.rows_range(self.edge_slices[e].clone());
                // columnwise scaling of W by z_l
                let mut dz = w.clone();
                for mut col in dz.column_iter_mut() {
                    col.component_mul_assign(&z_l);
                }
                let rho = w * &alpha;
                let product = &dz * &alpha;
                *cache.z[c].as_mut().expect("in-scope child") += &product;
                cache.dz_edge[e] = Some(dz);
                cache.edge_products[e] = Some(product);
                cache.edge_weights[e] = Some(rho);
                pending[c] -= 1;
                if pending[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        cache
    }

    pub fn evaluate(&self, params: &ParamVector, node: NodeId, points: &DMatrix<f64>) -> Result<DVector<f64>> {
        let cache = self.forward_sweep(params, node, points)?;
        Ok(cache.value().clone())
    }

    /// Gradient of `sum_i r_i^2 / (2 sigma^2)` with respect to every
    /// parameter, where `r = y - f_k` is the residual at the cached points.
    pub fn backward_sweep(&self, cache: &SweepCache, residual: &DVector<f64>, sigma: f64) -> Result<GradVector> {
        if residual.len() != cache.n {
            return Err(Error::StaleCache { cache: cache.n, residual: residual.len() });
        }
        let mut grad = DVector::zeros(self.num_params());
        self.backward_into(cache, residual, sigma, &mut grad);
        self.params_from(grad)
    }

    /// Accumulate the backward sweep of one node into `grad`.
    pub fn backward_into(&self, cache: &SweepCache, residual: &DVector<f64>, sigma: f64, grad: &mut DVector<f64>) {
        let nodes = self.index.len();
        let k = cache.node;
        let mut carrier: Vec<Option<DVector<f64>>> = vec![None; nodes];
        let p_k = residual * (-1.0 / (sigma * sigma));
        {
            let v_k = cache.dz_node[k].as_ref().expect("swept node");
            let mut g = grad.rows_range_mut(self.node_slices[k].clone());
            g.gemv_tr(1.0, v_k, &p_k, 1.0);
        }
        carrier[k] = Some(p_k);

        // number of in-scope children still to report back to each node
        let mut pending: Vec<usize> = (0..nodes)
            .map(|p| self.index.child_positions(p).iter().filter(|&&c| cache.z[c].is_some()).count())
            .collect();
        let mut queue = VecDeque::from([k]);
        while let Some(l) = queue.pop_front() {
            let p_l = carrier[l].take().expect("complete carrier");
            for &c in self.index.parent_positions(l) {
                let e = self.index.edge_index(c, l).expect("parent edge");
                let rho = cache.edge_weights[e].as_ref().expect("in-scope edge");
                let passed = p_l.component_mul(rho);
                {
                    let dz = cache.dz_edge[e].as_ref().expect("in-scope edge");
                    let mut g = grad.rows_range_mut(self.edge_slices[e].clone());
                    g.gemv_tr(1.0, dz, &p_l, 1.0);
                }
                {
                    let v_c = cache.dz_node[c].as_ref().expect("in-scope node");
                    let mut g = grad.rows_range_mut(self.node_slices[c].clone());
                    g.gemv_tr(1.0, v_c, &passed, 1.0);
                }
                match &mut carrier[c] {
                    Some(acc) => *acc += &passed,
                    slot => *slot = Some(passed),
                }
                pending[c] -= 1;
                if pending[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
    }

    /// Expand `f_node` into a single polynomial in the monomial basis.
    pub fn expand_to_polynomial(&self, params: &ParamVector, node: NodeId) -> Result<Polynomial> {
        self.check_layout(params)?;
        let k = self.index.pos(node)?;
        if let Some(b) = self.node_bases.iter().chain(&self.edge_bases).find(|b| b.kind() != BasisKind::Monomial) {
            return Err(Error::NonMonomialBasis(format!("{:?}", b.spec())));
        }
        let basis_poly = |basis: &Basis, coeffs: &[f64]| {
            Polynomial::from_terms(self.dim, basis.exponents().iter().cloned().zip(coeffs.iter().copied()))
        };
        let theta = params.values.as_slice();
        let mut polys: Vec<Option<Polynomial>> = vec![None; self.index.len()];
        for &u in self.index.topo_positions() {
            if u != k && !self.index.ancestor_positions(k).contains(&u) {
                continue;
            }
            let mut f = basis_poly(&self.node_bases[u], &theta[self.node_slices[u].clone()]);
            for &j in self.index.parent_positions(u) {
                let e = self.index.edge_index(j, u).expect("parent edge");
                let rho = basis_poly(&self.edge_bases[e], &theta[self.edge_slices[e].clone()]);
                let parent = polys[j].as_ref().expect("parents expanded first");
                f = &f + &(&rho * parent);
            }
            polys[u] = Some(f);
        }
        Ok(polys[k].take().expect("node expanded"))
    }

    pub fn node_slice(&self, id: NodeId) -> Result<Range<usize>> {
        Ok(self.node_slices[self.index.pos(id)?].clone())
    }

    pub fn edge_slice(&self, from: NodeId, to: NodeId) -> Result<Range<usize>> {
        Ok(self.edge_slices[self.edge_position(from, to)?].clone())
    }
}

/// Parameter-independent basis matrices for one node's sample set.
#[derive(Debug, Clone)]
pub struct PreparedPoints {
    node: usize,
    n: usize,
    in_scope: Vec<bool>,
    node_mats: Vec<Option<DMatrix<f64>>>,
    edge_mats: Vec<Option<DMatrix<f64>>>,
}

impl PreparedPoints {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Evaluations and partials produced by a forward sweep, indexed by node
/// and edge position. Entries outside the swept node's ancestry are `None`.
#[derive(Debug, Clone)]
pub struct SweepCache {
    node: usize,
    n: usize,
    order: Vec<usize>,
    /// `z_l`, the value of every in-scope node.
    pub z: Vec<Option<DVector<f64>>>,
    /// `V_l(x)`, the partial of `z_l` with respect to its own bias.
    pub dz_node: Vec<Option<DMatrix<f64>>>,
    /// `diag(z_parent) W(x)`, the partial of the edge product.
    pub dz_edge: Vec<Option<DMatrix<f64>>>,
    /// `z_parent * rho(x)`, the contribution of each edge to its child.
    pub edge_products: Vec<Option<DVector<f64>>>,
    /// `rho(x) = W(x) alpha`, the weighting function values.
    pub edge_weights: Vec<Option<DVector<f64>>>,
}

impl SweepCache {
    /// Values of the swept node.
    pub fn value(&self) -> &DVector<f64> {
        self.z[self.node].as_ref().expect("swept node evaluated")
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Node positions in the order the sweep dequeued them.
    pub fn visit_order(&self) -> &[usize] {
        &self.order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use approx::assert_relative_eq;

    fn linear_net(ids: &[NodeId], edges: &[(NodeId, NodeId)]) -> MfNet {
        let b = BasisSpec::monomial(1, 1);
        MfNet::new(GraphSpec::uniform(ids, edges, *ids.last().unwrap(), b.clone(), b)).unwrap()
    }

    fn pts(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    #[test]
    fn root_value_from_offset_and_slope() {
        let net = linear_net(&[1], &[]);
        let p = net.params_from(DVector::from_vec(vec![-0.399999, 0.61917357])).unwrap();
        assert_eq!(net.evaluate(&p, 1, &pts(&[0.0])).unwrap()[0], -0.399999);
        assert_relative_eq!(net.evaluate(&p, 1, &pts(&[1.0])).unwrap()[0], 0.21917457, epsilon = 1e-15);
    }

    #[test]
    fn zero_parameters_give_zero() {
        let net = linear_net(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]);
        let p = net.init_params(InitScheme::Zeros, 0);
        let z = net.evaluate(&p, 3, &pts(&[-0.5, 0.2, 0.9])).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn peer_with_edges_off_is_bias_only() {
        let net = linear_net(&[1, 2, 3], &[(1, 3), (2, 3)]);
        let mut p = net.init_params(InitScheme::Gaussian { scale: 1.0 }, 5);
        for (f, t) in [(1, 3), (2, 3)] {
            let r = net.edge_slice(f, t).unwrap();
            p.values.rows_range_mut(r).fill(0.0);
        }
        let x = pts(&[-0.3, 0.4]);
        let beta3 = p.node(3).unwrap();
        let z = net.evaluate(&p, 3, &x).unwrap();
        for (i, xi) in [-0.3, 0.4].iter().enumerate() {
            assert_relative_eq!(z[i], beta3[0] + beta3[1] * xi, epsilon = 1e-15);
        }
    }

    #[test]
    fn sweep_visits_only_ancestors_parents_first() {
        let net = linear_net(&[1, 2, 3, 4], &[(1, 2), (2, 3), (1, 3), (3, 4)]);
        let p = net.init_params(InitScheme::Gaussian { scale: 1.0 }, 1);
        let cache = net.forward_sweep(&p, 3, &pts(&[0.1])).unwrap();
        assert_eq!(cache.visit_order(), &[0, 1, 2]);
        assert!(cache.z[3].is_none());
        // z_3 = sum of edge products + bias
        let bias = cache.dz_node[2].as_ref().unwrap() * DVector::from_column_slice(p.node(3).unwrap());
        let e13 = net.index().edge_index(0, 2).unwrap();
        let e23 = net.index().edge_index(1, 2).unwrap();
        let total = bias
            + cache.edge_products[e13].as_ref().unwrap()
            + cache.edge_products[e23].as_ref().unwrap();
        assert_relative_eq!(cache.value()[0], total[0], epsilon = 1e-15);
    }

    #[test]
    fn root_gradient_is_least_squares_gradient() {
        let net = linear_net(&[1], &[]);
        let p = net.params_from(DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let x = pts(&[-1.0, 0.0, 0.5]);
        let cache = net.forward_sweep(&p, 1, &x).unwrap();
        let r = DVector::from_vec(vec![0.1, -0.4, 2.0]);
        let sigma = 0.5;
        let g = net.backward_sweep(&cache, &r, sigma).unwrap();
        let v = net.node_basis(1).unwrap().eval(&x).unwrap();
        let expect = -(v.transpose() * &r) / (sigma * sigma);
        assert_relative_eq!(g.values, expect, epsilon = 1e-14);
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let net = linear_net(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]);
        let p = net.init_params(InitScheme::Gaussian { scale: 1.0 }, 9);
        let cache = net.forward_sweep(&p, 3, &pts(&[0.1, 0.7])).unwrap();
        let g = net.backward_sweep(&cache, &DVector::zeros(2), 1.0).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sweep_errors() {
        let net = linear_net(&[1, 2], &[(1, 2)]);
        let p = net.init_params(InitScheme::Zeros, 0);
        assert!(matches!(net.forward_sweep(&p, 2, &DMatrix::zeros(0, 1)), Err(Error::EmptyPoints)));
        assert!(matches!(net.forward_sweep(&p, 5, &pts(&[0.0])), Err(Error::UnknownNode(5))));
        let other = linear_net(&[1], &[]);
        let q = other.init_params(InitScheme::Zeros, 0);
        assert!(matches!(net.forward_sweep(&q, 2, &pts(&[0.0])), Err(Error::LayoutMismatch(_))));
        let cache = net.forward_sweep(&p, 2, &pts(&[0.0, 1.0])).unwrap();
        assert!(matches!(
            net.backward_sweep(&cache, &DVector::zeros(3), 1.0),
            Err(Error::StaleCache { cache: 2, residual: 3 })
        ));
    }

    #[test]
    fn expansion_degrees() {
        let chain = linear_net(&[1, 2, 3], &[(1, 2), (2, 3)]);
        let p = chain.init_params(InitScheme::Gaussian { scale: 1.0 }, 2);
        assert_eq!(chain.expand_to_polynomial(&p, 3).unwrap().degree(), 3);

        let peer = linear_net(&[1, 2, 3], &[(1, 3), (2, 3)]);
        let p = peer.init_params(InitScheme::Gaussian { scale: 1.0 }, 2);
        assert_eq!(peer.expand_to_polynomial(&p, 3).unwrap().degree(), 2);

        let mut p = peer.init_params(InitScheme::Gaussian { scale: 1.0 }, 4);
        for (f, t) in [(1, 3), (2, 3)] {
            let r = peer.edge_slice(f, t).unwrap();
            p.values.rows_range_mut(r).fill(0.0);
        }
        let poly = peer.expand_to_polynomial(&p, 3).unwrap();
        let beta3 = p.node(3).unwrap();
        assert_eq!(poly.coefficient(&[0]), beta3[0]);
        assert_eq!(poly.coefficient(&[1]), beta3[1]);
        assert_eq!(poly.degree(), 1);
    }

    #[test]
    fn expansion_rejects_legendre() {
        let b = BasisSpec::legendre(1, vec![[-1.0, 1.0]]);
        let net = MfNet::new(GraphSpec::uniform(&[1, 2], &[(1, 2)], 2, b.clone(), b)).unwrap();
        let p = net.init_params(InitScheme::Zeros, 0);
        assert!(matches!(net.expand_to_polynomial(&p, 2), Err(Error::NonMonomialBasis(_))));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let mut spec = GraphSpec::uniform(&[1, 2], &[(1, 2)], 2, BasisSpec::monomial(1, 1), BasisSpec::monomial(0, 1));
        spec.nodes[1].basis = BasisSpec::monomial(1, 2);
        assert!(matches!(MfNet::new(spec), Err(Error::DimensionMismatch { .. })));
    }
}
