//! Reference implementations and random instances shared by the
//! integration tests. The evaluator here recurses over parents directly and
//! never touches the library's sweeps.

#![allow(dead_code)]

use std::f64::consts::PI;

use mfnets::{BasisSpec, EdgeSpec, GraphSpec, MfNet, NodeData, NodeId, NodeSpec, ParamVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `f_node` by direct recursion: node bias plus each parent times its edge.
pub fn naive_eval(net: &MfNet, params: &ParamVector, node: NodeId, x: &DMatrix<f64>) -> DVector<f64> {
    let spec = net.spec();
    let bias = net.node_basis(node).unwrap().eval(x).unwrap() * DVector::from_column_slice(params.node(node).unwrap());
    let mut f = bias;
    for e in spec.edges.iter().filter(|e| e.to == node) {
        let rho = net.edge_basis(e.from, e.to).unwrap().eval(x).unwrap()
            * DVector::from_column_slice(params.edge(e.from, e.to).unwrap());
        f += rho.component_mul(&naive_eval(net, params, e.from, x));
    }
    f
}

pub fn naive_nll(net: &MfNet, params: &ParamVector, data: &[NodeData]) -> f64 {
    data.iter()
        .map(|d| {
            let n = d.len() as f64;
            let r = &d.y - naive_eval(net, params, d.node, &d.x);
            0.5 * n * (2.0 * PI).ln() + n * d.sigma.ln() + r.norm_squared() / (2.0 * d.sigma * d.sigma)
        })
        .sum()
}

pub fn central_differences(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut up = x.clone();
        let mut down = x.clone();
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// Largest coordinate discrepancy relative to the gradient scale.
pub fn relative_discrepancy(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(1.0);
    (a - b).amax() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chain,
    Star,
    ThreeModelPair,
    Diamond,
}

pub const SHAPES: [Shape; 4] = [Shape::Chain, Shape::Star, Shape::ThreeModelPair, Shape::Diamond];

fn random_basis(rng: &mut ChaCha8Rng, dim: usize, max_degree: usize) -> BasisSpec {
    let degree = rng.random_range(0..=max_degree);
    if rng.random_bool(0.5) {
        BasisSpec::monomial(degree, dim)
    } else {
        BasisSpec::legendre(degree, vec![[-1.0, 1.0]; dim])
    }
}

/// Topology of `shape`, sized by `rng` where it varies.
pub fn shape_edges(shape: Shape, rng: &mut ChaCha8Rng) -> (Vec<NodeId>, Vec<(NodeId, NodeId)>, NodeId) {
    match shape {
        Shape::Chain => {
            let h = rng.random_range(2..=4);
            let ids: Vec<NodeId> = (1..=h).collect();
            let edges = (1..h).map(|j| (j, j + 1)).collect();
            (ids, edges, h)
        }
        Shape::Star => {
            let n = rng.random_range(3..=5);
            ((1..=n).collect(), (1..n).map(|j| (j, n)).collect(), n)
        }
        Shape::ThreeModelPair => {
            if rng.random_bool(0.5) {
                (vec![1, 2, 3], vec![(1, 2), (1, 3), (2, 3)], 3)
            } else {
                (vec![1, 2, 3], vec![(1, 2), (2, 3)], 3)
            }
        }
        Shape::Diamond => (vec![1, 2, 3, 4, 5], vec![(1, 2), (1, 3), (2, 4), (3, 4), (4, 5)], 5),
    }
}

pub struct Instance {
    pub net: MfNet,
    pub params: ParamVector,
    pub data: Vec<NodeData>,
}

/// Random graph of `shape` with mixed bases, parameters and data.
pub fn random_instance(shape: Shape, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=2);
    let (ids, edges, target) = shape_edges(shape, &mut rng);
    let nodes = ids.iter().map(|&id| NodeSpec { id, basis: random_basis(&mut rng, dim, 2) }).collect();
    let edges = edges.iter().map(|&(from, to)| EdgeSpec { from, to, basis: random_basis(&mut rng, dim, 2) }).collect();
    let net = MfNet::new(GraphSpec { target, nodes, edges }).unwrap();
    let values = DVector::from_fn(net.num_params(), |_, _| rng.random_range(-1.0..1.0));
    let params = net.params_from(values).unwrap();
    let mut data = Vec::new();
    for &id in &ids {
        if id != target && rng.random_bool(0.3) {
            continue;
        }
        let n = rng.random_range(1..=6);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        data.push(NodeData::new(id, x, y, rng.random_range(0.5..2.0)).unwrap());
    }
    Instance { net, params, data }
}

pub fn uniform_graph(ids: &[NodeId], edges: &[(NodeId, NodeId)], target: NodeId, p: usize, dim: usize) -> GraphSpec {
    GraphSpec::uniform(ids, edges, target, BasisSpec::monomial(p, dim), BasisSpec::monomial(p, dim))
}
