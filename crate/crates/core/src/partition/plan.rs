use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cost::stage_bounds;
use super::{CostModel, LayerProfile, PartitionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    /// No channel capacity has been applied yet.
    Unchecked,
    Feasible,
    Infeasible,
}

/// Contiguous division of a network into stages.
///
/// A cut `c` sits after the first `c` layers, so stage `i` runs layers
/// `cuts[i-1]..cuts[i]` (with `0` and `num_layers` as the outer bounds).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub num_layers: usize,
    pub cuts: Vec<usize>,
    pub stage_macs: Vec<u64>,
    pub cut_sizes: Vec<u64>,
    pub feasibility: Feasibility,
}

impl PartitionPlan {
    pub fn from_cuts(profile: &LayerProfile, cuts: Vec<usize>) -> Result<Self, PartitionError> {
        let layers = profile.num_layers();
        let mut prev = 0;
        for &c in &cuts {
            if c <= prev || c >= layers {
                return Err(PartitionError::InvalidCuts(format!(
                    "cuts {cuts:?} must be strictly increasing within 1..{layers}"
                )));
            }
            prev = c;
        }
        let stage_macs = stage_bounds(&cuts, layers)
            .map(|(s, e)| profile.range_macs(s, e))
            .collect();
        let cut_sizes = cuts.iter().map(|&c| profile.cut_size(c)).collect();
        Ok(Self {
            num_layers: layers,
            cuts,
            stage_macs,
            cut_sizes,
            feasibility: Feasibility::Unchecked,
        })
    }

    /// Marks the plan against a channel capacity in elements.
    pub fn with_capacity(mut self, capacity: u64) -> Self {
        self.feasibility = if self.cut_sizes.iter().all(|&s| s <= capacity) {
            Feasibility::Feasible
        } else {
            Feasibility::Infeasible
        };
        self
    }

    pub fn num_stages(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn is_feasible(&self) -> bool {
        self.feasibility == Feasibility::Feasible
    }

    pub fn stage_ranges(&self) -> Vec<(usize, usize)> {
        stage_bounds(&self.cuts, self.num_layers).collect()
    }

    pub fn total_comm(&self) -> u64 {
        self.cut_sizes.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub macs: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<String>,
}

/// Plan file shared by the runtime, simulator and benchmark commands.
///
/// ```toml
/// model = "lenet"
/// num_layers = 7
/// cuts = [2]
/// cut_sizes = [864]
/// feasibility = "feasible"
/// channel_capacity = 1000    # optional
///
/// [[stages]]
/// index = 0
/// start = 0
/// end = 2
/// macs = 89856
/// layers = ["conv1", "pool1"]
///
/// [cost_model]               # optional
/// time_per_mac = 1.8e-8
/// channel_latency = 0.0
/// channel_seconds_per_element = 0.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub model: String,
    pub num_layers: usize,
    pub cuts: Vec<usize>,
    pub cut_sizes: Vec<u64>,
    pub feasibility: Feasibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_capacity: Option<u64>,
    pub stages: Vec<StageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_model: Option<CostModel>,
}

impl PlanFile {
    pub fn new(
        plan: &PartitionPlan,
        profile: &LayerProfile,
        capacity: Option<u64>,
        cost_model: Option<CostModel>,
    ) -> Self {
        let stages = plan
            .stage_ranges()
            .into_iter()
            .enumerate()
            .map(|(index, (start, end))| StageEntry {
                index,
                start,
                end,
                macs: plan.stage_macs[index],
                layers: (start..end).map(|l| profile.label(l)).collect(),
            })
            .collect();
        Self {
            model: profile.name.clone(),
            num_layers: plan.num_layers,
            cuts: plan.cuts.clone(),
            cut_sizes: plan.cut_sizes.clone(),
            feasibility: plan.feasibility,
            channel_capacity: capacity,
            stages,
            cost_model,
        }
    }

    /// Rebuilds the plan against `profile`, checking that the recorded
    /// stage MACs and cut sizes agree with it.
    pub fn to_plan(&self, profile: &LayerProfile) -> Result<PartitionPlan, PartitionError> {
        if self.num_layers != profile.num_layers() {
            return Err(PartitionError::File(format!(
                "plan is for {} layers, model has {}",
                self.num_layers,
                profile.num_layers()
            )));
        }
        let mut plan = PartitionPlan::from_cuts(profile, self.cuts.clone())?;
        if plan.cut_sizes != self.cut_sizes {
            return Err(PartitionError::File(format!(
                "cut sizes {:?} disagree with model ({:?})",
                self.cut_sizes, plan.cut_sizes
            )));
        }
        plan.feasibility = self.feasibility;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, PartitionError> {
        toml::from_str(text).map_err(|e| PartitionError::File(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PartitionError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PartitionError::File(e.to_string()))?;
        Self::from_toml(&text)
    }
}
