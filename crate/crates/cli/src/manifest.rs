//! Fit manifests: the graph, per-node data files and fit settings in one
//! TOML document. Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use mfnets::data_io::load_dataset;
use mfnets::{FitConfig, GraphSpec, NodeData, NodeId};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Path(PathBuf),
    Inline(GraphSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEntry {
    pub node: NodeId,
    pub path: PathBuf,
    #[serde(default = "unit")]
    pub sigma: f64,
}

fn unit() -> f64 {
    1.0
}

/// Noiseless values of one node on a test set, for error reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub node: NodeId,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub graph: GraphSource,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthEntry>,
    pub data: Vec<DataEntry>,
}

/// A manifest with its files read.
pub struct Loaded {
    pub manifest: Manifest,
    pub base: PathBuf,
    pub graph: GraphSpec,
    pub data: Vec<NodeData>,
    pub truth: Option<(NodeId, DMatrix<f64>, DVector<f64>)>,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::new(format!("{}: {e}", path.display())))
}

pub fn read_graph(path: &Path) -> Result<GraphSpec, CliError> {
    GraphSpec::from_toml(&read_text(path)?).map_err(|e| CliError::new(format!("{}: {e}", path.display())))
}

impl Manifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new(format!("{}: {e}", origin.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Loaded, CliError> {
        let manifest = Manifest::parse(&read_text(path)?, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let graph = match &manifest.graph {
            GraphSource::Path(p) => read_graph(&base.join(p))?,
            GraphSource::Inline(g) => g.clone(),
        };
        if manifest.data.is_empty() {
            return Err(CliError::new(format!("{}: no data entries", path.display())));
        }
        let mut data = Vec::new();
        for entry in &manifest.data {
            if !graph.nodes.iter().any(|n| n.id == entry.node) {
                return Err(CliError::new(format!("data entry names node {} which is not in the graph", entry.node)));
            }
            data.push(load_dataset(&base.join(&entry.path), entry.node, entry.sigma)?);
        }
        let truth = match &manifest.truth {
            Some(t) => {
                let d = load_dataset(&base.join(&t.path), t.node, 1.0)?;
                Some((t.node, d.x, d.y))
            }
            None => None,
        };
        Ok(Loaded { manifest, base, graph, data, truth })
    }
}
