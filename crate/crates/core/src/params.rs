//! Flat parameter vectors and their layout.

use std::fmt;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Who owns a parameter slice: a node's bias coefficients or an edge's
/// weighting coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlotOwner {
    Node { id: NodeId },
    Edge { from: NodeId, to: NodeId },
}

impl fmt::Display for SlotOwner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotOwner::Node { id } => write!(f, "node {id}"),
            SlotOwner::Edge { from, to } => write!(f, "edge {from} -> {to}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    #[serde(flatten)]
    pub owner: SlotOwner,
    pub offset: usize,
    pub len: usize,
}

impl ParamSlot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Node slots in ascending id order followed by edge slots in ascending
/// `(from, to)` order; contiguous and disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub slots: Vec<ParamSlot>,
}

impl ParamLayout {
    pub fn total_len(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn find(&self, owner: SlotOwner) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.owner == owner)
    }

    /// Owner and within-slot index of a flat coordinate.
    pub fn locate(&self, coord: usize) -> Option<(SlotOwner, usize)> {
        self.slots
            .iter()
            .find(|s| s.range().contains(&coord))
            .map(|s| (s.owner, coord - s.offset))
    }

    pub fn check_contiguous(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.slots {
            if s.offset != next {
                return Err(Error::LayoutMismatch(format!("{} starts at {} not {next}", s.owner, s.offset)));
            }
            next += s.len;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: ParamLayout,
    #[serde(with = "dvector_serde")]
    pub values: DVector<f64>,
}

/// Gradients share the parameter layout.
pub type GradVector = ParamVector;

impl ParamVector {
    pub fn new(layout: ParamLayout, values: DVector<f64>) -> Result<Self> {
        layout.check_contiguous()?;
        if layout.total_len() != values.len() {
            return Err(Error::LayoutMismatch(format!(
                "layout covers {} values, vector has {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(ParamVector { layout, values })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        let n = layout.total_len();
        ParamVector { layout, values: DVector::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, owner: SlotOwner) -> Option<&[f64]> {
        let slot = self.layout.find(owner)?;
        Some(&self.values.as_slice()[slot.range()])
    }

    pub fn slice_mut(&mut self, owner: SlotOwner) -> Option<&mut [f64]> {
        let range = self.layout.find(owner)?.range();
        Some(&mut self.values.as_mut_slice()[range])
    }

    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        self.slice(SlotOwner::Node { id })
    }

    pub fn edge(&self, from: NodeId, to: NodeId) -> Option<&[f64]> {
        self.slice(SlotOwner::Edge { from, to })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ParamVector = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        ParamVector::new(raw.layout, raw.values)
    }
}

mod dvector_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum InitScheme {
    Zeros,
    Gaussian { scale: f64 },
    /// Each edge's constant coefficient is 1, everything else 0: every child
    /// starts as the plain sum of its parents.
    #[serde(alias = "edge-one")]
    ConstantEdgeOne,
}

impl InitScheme {
    pub fn is_random(&self) -> bool {
        matches!(self, InitScheme::Gaussian { .. })
    }
}

/// Deterministic parameter initialization for `layout`.
pub fn init_params(layout: &ParamLayout, scheme: InitScheme, seed: u64) -> ParamVector {
    let mut p = ParamVector::zeros(layout.clone());
    match scheme {
        InitScheme::Zeros => {}
        InitScheme::Gaussian { scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, scale.abs()).expect("finite scale");
            for v in p.values.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        InitScheme::ConstantEdgeOne => {
            for slot in &layout.slots {
                if matches!(slot.owner, SlotOwner::Edge { .. }) && slot.len > 0 {
                    p.values[slot.offset] = 1.0;
                }
            }
        }
    }
    p
}
