//! Multifidelity surrogate networks.
//!
//! A network is a directed acyclic graph whose nodes are surrogates of
//! information sources of varying fidelity. Each node adds a local bias
//! function to a weighted sum of its parents, with weights that are
//! themselves functions of the input. All node and edge coefficients are
//! trained jointly from every source's data by minimizing a (possibly
//! regularized) nonlinear least-squares objective whose gradient is computed
//! with specialized forward and backward sweeps over the graph.

pub mod basis;
pub mod data_io;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod mfnet;
pub mod networks;
pub mod objective;
pub mod optimize;
pub mod params;
pub mod poly;

pub use basis::{make_basis, Basis, BasisKind, BasisSpec};
pub use error::{Error, Result};
pub use graph::{validate, EdgeKey, EdgeSpec, GraphSpec, NodeId, NodeSpec, TraversalIndex};
pub use mfnet::{MfNet, SweepCache};
pub use objective::{NodeData, RegConfig, RegKind};
pub use optimize::{fit, fit_auto, fit_sparse, single_fidelity_fit, FitConfig, FitResult, StopReason};
pub use params::{init_params, GradVector, InitScheme, ParamLayout, ParamVector, SlotOwner};
pub use poly::Polynomial;
