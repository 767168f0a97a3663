use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis spec: {0}")]
    InvalidBasis(String),

    #[error("dimension mismatch: expected {expected} input dimensions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cycle detected: {}", format_cycle(.0))]
    CycleDetected(Vec<NodeId>),

    #[error("edge {from} -> {to} references unknown node {missing}")]
    DanglingEdge { from: NodeId, to: NodeId, missing: NodeId },

    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: NodeId, to: NodeId },

    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),

    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),

    #[error("target node {0} is not in the graph")]
    UnknownTarget(NodeId),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("parameter layout does not match graph: {0}")]
    LayoutMismatch(String),

    #[error("empty point set")]
    EmptyPoints,

    #[error("stale sweep cache: cache holds {cache} points but residual has {residual}")]
    StaleCache { cache: usize, residual: usize },

    #[error("expansion requires monomial bases; {0} is not monomial")]
    NonMonomialBasis(String),

    #[error("duplicate data for node {0}")]
    DuplicateNodeData(NodeId),

    #[error("no datasets supplied")]
    NoData,

    #[error("invalid data for node {node}: {reason}")]
    InvalidData { node: NodeId, reason: String },

    #[error("negative regularization weight {0}")]
    NegativeLambda(f64),

    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),

    #[error("objective became non-finite")]
    NonFiniteObjective,

    #[error("empty data")]
    EmptyData,

    #[error("truth has zero norm")]
    ZeroTruthNorm,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("pool too small for node {node}: need {needed} samples, have {available}")]
    PoolTooSmall { node: NodeId, needed: usize, available: usize },

    #[error("{path}: line {line}: {reason}")]
    Parse { path: String, line: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

fn format_cycle(cycle: &[NodeId]) -> String {
    cycle.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(" -> ")
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
