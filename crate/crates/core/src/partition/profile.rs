use serde::{Deserialize, Serialize};

use super::PartitionError;
use crate::cnn::lenet::ReferenceTable;
use crate::cnn::ModelGraph;

/// What the partitioner needs to know about a network: per-layer MAC counts
/// and the element count each layer emits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub macs: Vec<u64>,
    pub output_sizes: Vec<u64>,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl LayerProfile {
    pub fn new(
        name: impl Into<String>,
        macs: Vec<u64>,
        output_sizes: Vec<u64>,
    ) -> Result<Self, PartitionError> {
        if macs.is_empty() {
            return Err(PartitionError::Profile("profile has no layers".into()));
        }
        if macs.len() != output_sizes.len() {
            return Err(PartitionError::Profile(format!(
                "{} MAC counts but {} output sizes",
                macs.len(),
                output_sizes.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            macs,
            output_sizes,
            labels: Vec::new(),
        })
    }

    /// Counts computed from the model's layer shapes.
    pub fn from_model(model: &ModelGraph) -> Self {
        Self {
            name: model.name().to_string(),
            macs: model.layer_macs(),
            output_sizes: model.output_sizes(),
            labels: model.layers().iter().map(|l| l.name()).collect(),
        }
    }

    /// Counts as printed in the LeNet reference table.
    pub fn from_reference(table: &ReferenceTable) -> Self {
        Self {
            name: "lenet-reference".into(),
            macs: table.macs(),
            output_sizes: table.output_sizes(),
            labels: table.rows.iter().map(|r| r.label.to_string()).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.macs.len()
    }

    pub fn total_macs(&self) -> u64 {
        self.macs.iter().sum()
    }

    /// MACs of layers `start..end`.
    pub fn range_macs(&self, start: usize, end: usize) -> u64 {
        self.macs[start..end].iter().sum()
    }

    /// Elements crossing a cut placed after the first `cut` layers.
    pub fn cut_size(&self, cut: usize) -> u64 {
        self.output_sizes[cut - 1]
    }

    /// `prefix[c]` = MACs of the first `c` layers.
    pub fn prefix_macs(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.macs.len() + 1);
        out.push(0);
        let mut acc = 0;
        for &m in &self.macs {
            acc += m;
            out.push(acc);
        }
        out
    }

    pub fn label(&self, layer: usize) -> String {
        self.labels
            .get(layer)
            .cloned()
            .unwrap_or_else(|| format!("layer{}", layer + 1))
    }
}
