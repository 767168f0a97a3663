//! DAG structure of a multifidelity network and the traversal index the
//! sweeps run on.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub basis: BasisSpec,
}

/// Edge `from -> to` carrying the weighting function of the child `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEdge", into = "RawEdge")]
pub struct EdgeSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub basis: BasisSpec,
}

#[derive(Serialize, Deserialize)]
struct RawEdge {
    edge: String,
    basis: BasisSpec,
}

impl TryFrom<RawEdge> for EdgeSpec {
    type Error = String;

    fn try_from(raw: RawEdge) -> std::result::Result<Self, String> {
        let EdgeKey { from, to } = raw.edge.parse()?;
        Ok(EdgeSpec { from, to, basis: raw.basis })
    }
}

impl From<EdgeSpec> for RawEdge {
    fn from(e: EdgeSpec) -> Self {
        RawEdge { edge: EdgeKey { from: e.from, to: e.to }.to_string(), basis: e.basis }
    }
}

/// An ordered node pair, written `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct EdgeKey {
    pub from: NodeId,
    pub to: NodeId,
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

impl From<EdgeKey> for String {
    fn from(e: EdgeKey) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for EdgeKey {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl FromStr for EdgeKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once("->")
            .ok_or_else(|| format!("edge '{s}' is not of the form 'from -> to'"))?;
        let parse = |t: &str| {
            t.trim().parse::<NodeId>().map_err(|e| format!("edge '{s}': bad node id '{}': {e}", t.trim()))
        };
        let (from, to) = (parse(a)?, parse(b)?);
        if from == to {
            return Err(format!("edge '{s}' is a self-loop"));
        }
        Ok(EdgeKey { from, to })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub target: NodeId,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
}

impl GraphSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("graph spec serializes")
    }

    /// Build a spec where every node and every edge uses the same basis.
    pub fn uniform(
        ids: &[NodeId],
        edges: &[(NodeId, NodeId)],
        target: NodeId,
        node_basis: BasisSpec,
        edge_basis: BasisSpec,
    ) -> Self {
        GraphSpec {
            target,
            nodes: ids.iter().map(|&id| NodeSpec { id, basis: node_basis.clone() }).collect(),
            edges: edges
                .iter()
                .map(|&(from, to)| EdgeSpec { from, to, basis: edge_basis.clone() })
                .collect(),
        }
    }

    /// The same graph with all edges reversed. The target is kept.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.edges {
            std::mem::swap(&mut e.from, &mut e.to);
        }
        out
    }
}

/// Precomputed structural queries over a validated graph.
///
/// Nodes are addressed internally by their position in ascending id order;
/// edges by their position in ascending `(from, to)` order.
#[derive(Debug, Clone)]
pub struct TraversalIndex {
    ids: Vec<NodeId>,
    position: BTreeMap<NodeId, usize>,
    edges: Vec<(usize, usize)>,
    edge_lookup: HashMap<(usize, usize), usize>,
    topo_order: Vec<usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    ancestors: Vec<BTreeSet<usize>>,
    roots: Vec<usize>,
    target: usize,
}

pub fn validate(spec: &GraphSpec) -> Result<TraversalIndex> {
    let mut position = BTreeMap::new();
    for node in &spec.nodes {
        if position.insert(node.id, 0).is_some() {
            return Err(Error::DuplicateNode(node.id));
        }
    }
    for (pos, slot) in position.values_mut().enumerate() {
        *slot = pos;
    }
    let ids: Vec<NodeId> = position.keys().copied().collect();
    let target = *position.get(&spec.target).ok_or(Error::UnknownTarget(spec.target))?;

    let mut keys = BTreeSet::new();
    for e in &spec.edges {
        if e.from == e.to {
            return Err(Error::SelfLoop(e.from));
        }
        for end in [e.from, e.to] {
            if !position.contains_key(&end) {
                return Err(Error::DanglingEdge { from: e.from, to: e.to, missing: end });
            }
        }
        if !keys.insert((e.from, e.to)) {
            return Err(Error::DuplicateEdge { from: e.from, to: e.to });
        }
    }

    let n = ids.len();
    let edges: Vec<(usize, usize)> = keys.iter().map(|(f, t)| (position[f], position[t])).collect();
    let edge_lookup = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut parents = vec![Vec::new(); n];
    let mut children = vec![Vec::new(); n];
    for &(f, t) in &edges {
        parents[t].push(f);
        children[f].push(t);
    }
    for list in parents.iter_mut().chain(children.iter_mut()) {
        list.sort_unstable();
    }

    // Kahn's algorithm with ascending-id tie breaking.
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut topo_order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        topo_order.push(u);
        for &c in &children[u] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if topo_order.len() < n {
        let cycle = find_cycle(&parents, &indegree);
        return Err(Error::CycleDetected(cycle.into_iter().map(|p| ids[p]).collect()));
    }

    let mut ancestors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &u in &topo_order {
        let mut acc = BTreeSet::new();
        for &p in &parents[u] {
            acc.insert(p);
            acc.extend(ancestors[p].iter().copied());
        }
        ancestors[u] = acc;
    }
    let roots = (0..n).filter(|&i| parents[i].is_empty()).collect();

    Ok(TraversalIndex {
        ids,
        position,
        edges,
        edge_lookup,
        topo_order,
        parents,
        children,
        ancestors,
        roots,
        target,
    })
}

/// Nodes left with positive in-degree after Kahn's algorithm each have a
/// parent that is also left, so walking parents must revisit a node.
fn find_cycle(parents: &[Vec<usize>], indegree: &[usize]) -> Vec<usize> {
    let start = indegree.iter().position(|&d| d > 0).expect("a remaining node");
    let mut seen = HashMap::new();
    let mut path = Vec::new();
    let mut u = start;
    while !seen.contains_key(&u) {
        seen.insert(u, path.len());
        path.push(u);
        u = *parents[u].iter().find(|&&p| indegree[p] > 0).expect("remaining parent");
    }
    let mut cycle = path[seen[&u]..].to_vec();
    // walked child -> parent; report in edge direction
    cycle.reverse();
    cycle.push(cycle[0]);
    cycle
}

impl TraversalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn id(&self, pos: usize) -> NodeId {
        self.ids[pos]
    }

    pub fn pos(&self, id: NodeId) -> Result<usize> {
        self.position.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn target(&self) -> NodeId {
        self.ids[self.target]
    }

    /// Edges as position pairs, ascending by `(from, to)` id.
    pub fn edge_positions(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_keys(&self) -> Vec<EdgeKey> {
        self.edges.iter().map(|&(f, t)| EdgeKey { from: self.ids[f], to: self.ids[t] }).collect()
    }

    pub fn edge_index(&self, from: usize, to: usize) -> Option<usize> {
        self.edge_lookup.get(&(from, to)).copied()
    }

    pub fn topo_positions(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn parent_positions(&self, pos: usize) -> &[usize] {
        &self.parents[pos]
    }

    pub fn child_positions(&self, pos: usize) -> &[usize] {
        &self.children[pos]
    }

    pub fn ancestor_positions(&self, pos: usize) -> &BTreeSet<usize> {
        &self.ancestors[pos]
    }

    pub fn root_positions(&self) -> &[usize] {
        &self.roots
    }

    pub fn topo_order(&self) -> Vec<NodeId> {
        self.topo_order.iter().map(|&p| self.ids[p]).collect()
    }

    pub fn roots(&self) -> Vec<NodeId> {
        self.roots.iter().map(|&p| self.ids[p]).collect()
    }

    pub fn parents(&self, id: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.parents[self.pos(id)?].iter().map(|&p| self.ids[p]).collect())
    }

    pub fn children(&self, id: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.children[self.pos(id)?].iter().map(|&p| self.ids[p]).collect())
    }

    pub fn ancestors(&self, id: NodeId) -> Result<BTreeSet<NodeId>> {
        Ok(self.ancestors[self.pos(id)?].iter().map(|&p| self.ids[p]).collect())
    }

    /// Number of nodes on the longest root-to-`id` path, counting `id`.
    pub fn longest_chain(&self, id: NodeId) -> Result<usize> {
        let target = self.pos(id)?;
        let mut depth = vec![0usize; self.len()];
        for &u in &self.topo_order {
            depth[u] = 1 + self.parents[u].iter().map(|&p| depth[p]).max().unwrap_or(0);
            if u == target {
                break;
            }
        }
        Ok(depth[target])
    }

    pub fn is_weakly_connected(&self) -> bool {
        if self.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in self.parents[u].iter().chain(&self.children[u]) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn is_weakly_connected(spec: &GraphSpec) -> Result<bool> {
    Ok(validate(spec)?.is_weakly_connected())
}

pub fn longest_chain(spec: &GraphSpec, node: NodeId) -> Result<usize> {
    validate(spec)?.longest_chain(node)
}
