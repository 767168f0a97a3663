//! Named graph shapes used by the generators and experiments.

use crate::basis::BasisSpec;
use crate::graph::{GraphSpec, NodeId};

/// Single chain through `order`; the last id is the target.
pub fn chain(order: &[NodeId], node_basis: BasisSpec, edge_basis: BasisSpec) -> GraphSpec {
    let mut ids = order.to_vec();
    let edges: Vec<_> = order.windows(2).map(|w| (w[0], w[1])).collect();
    ids.sort_unstable();
    GraphSpec::uniform(&ids, &edges, *order.last().expect("nonempty chain"), node_basis, edge_basis)
}

/// Nodes `1..n` all feed node `n`.
pub fn peer(n: NodeId, node_basis: BasisSpec, edge_basis: BasisSpec) -> GraphSpec {
    let ids: Vec<NodeId> = (1..=n).collect();
    let edges: Vec<_> = (1..n).map(|j| (j, n)).collect();
    GraphSpec::uniform(&ids, &edges, n, node_basis, edge_basis)
}

/// Every `i -> j` with `i < j` on nodes `1..n`.
pub fn full(n: NodeId, node_basis: BasisSpec, edge_basis: BasisSpec) -> GraphSpec {
    let ids: Vec<NodeId> = (1..=n).collect();
    let edges: Vec<_> = (1..=n).flat_map(|i| (i + 1..=n).map(move |j| (i, j))).collect();
    GraphSpec::uniform(&ids, &edges, n, node_basis, edge_basis)
}

/// Linear nodes and edges in one dimension.
pub fn linear_1d() -> (BasisSpec, BasisSpec) {
    (BasisSpec::monomial(1, 1), BasisSpec::monomial(1, 1))
}

/// Generating graph of the three-model example: `1 -> 2 -> 3` plus `1 -> 3`.
pub fn three_model_true() -> GraphSpec {
    let (nb, eb) = linear_1d();
    full(3, nb, eb)
}

/// `1 -> 2 -> 3` with linear functions.
pub fn three_model_hierarchical() -> GraphSpec {
    let (nb, eb) = linear_1d();
    chain(&[1, 2, 3], nb, eb)
}

/// An eleven-node DAG with two converging branches.
pub fn eleven_node(node_basis: BasisSpec, edge_basis: BasisSpec) -> GraphSpec {
    let ids: Vec<NodeId> = (1..=11).collect();
    let edges = [
        (1, 2),
        (1, 5),
        (1, 6),
        (2, 6),
        (3, 7),
        (4, 8),
        (5, 9),
        (6, 9),
        (7, 10),
        (8, 10),
        (9, 11),
        (10, 11),
    ];
    GraphSpec::uniform(&ids, &edges, 11, node_basis, edge_basis)
}

/// Nine-source ensemble, three chains by sample count joined at the
/// highest-count members.
pub fn noise_natural(node_basis: BasisSpec, edge_basis: BasisSpec) -> GraphSpec {
    let ids: Vec<NodeId> = (1..=9).collect();
    let edges = [(1, 2), (2, 3), (3, 6), (4, 5), (5, 6), (6, 9), (7, 8), (8, 9)];
    GraphSpec::uniform(&ids, &edges, 9, node_basis, edge_basis)
}

/// Nine-source chain ordered by model form first, sample count second.
pub fn noise_by_form(node_basis: BasisSpec, edge_basis: BasisSpec) -> GraphSpec {
    chain(&[1, 2, 3, 4, 5, 6, 7, 8, 9], node_basis, edge_basis)
}

/// Nine-source chain ordered by sample count first, model form second.
pub fn noise_by_count(node_basis: BasisSpec, edge_basis: BasisSpec) -> GraphSpec {
    chain(&[1, 4, 7, 2, 5, 8, 3, 6, 9], node_basis, edge_basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{is_weakly_connected, longest_chain, validate};

    #[test]
    fn shapes() {
        let (nb, eb) = linear_1d();
        let idx = validate(&three_model_true()).unwrap();
        assert_eq!(idx.ancestors(3).unwrap().into_iter().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(longest_chain(&three_model_hierarchical(), 3).unwrap(), 3);
        assert_eq!(peer(3, nb.clone(), eb.clone()).edges.len(), 2);
        assert_eq!(full(4, nb.clone(), eb.clone()).edges.len(), 6);
        assert!(is_weakly_connected(&eleven_node(nb.clone(), eb.clone())).unwrap());

        let natural = noise_natural(nb.clone(), eb.clone());
        assert_eq!(natural.edges.len(), 8);
        assert!(validate(&natural).is_ok());
        assert_eq!(longest_chain(&natural, 9).unwrap(), 5);
        for g in [noise_by_form(nb.clone(), eb.clone()), noise_by_count(nb, eb)] {
            assert_eq!(g.edges.len(), 8);
            assert_eq!(longest_chain(&g, 9).unwrap(), 9);
            assert_eq!(g.target, 9);
        }
    }
}
