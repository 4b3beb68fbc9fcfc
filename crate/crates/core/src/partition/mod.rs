//! Layer-wise partitioning of a network into pipeline stages.

mod cost;
mod dpm;
mod oracle;
mod plan;
mod profile;

pub use cost::{predict, stage_bounds, CostModel, StagePrediction};
pub use dpm::{
    balanced_cuts, dpm_partition, dpm_trace, enforce_bandwidth, optimal_cuts, refine_locally,
    DpmTrace, PartitionRequest,
};
pub use oracle::{binomial, brute_force_partition, for_each_cut_set, ENUMERATION_LIMIT};
pub use plan::{Feasibility, PartitionPlan, PlanFile, StageEntry};
pub use profile::LayerProfile;

#[derive(Debug, thiserror::Error)]
pub enum PartitionError {
    #[error("cannot split {layers} layers across {workers} workers")]
    InfeasibleRequest { workers: usize, layers: usize },
    #[error("invalid cuts: {0}")]
    InvalidCuts(String),
    #[error("invalid cost model: {0}")]
    InvalidCost(String),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("{count} candidate plans exceed the enumeration limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },
    #[error("plan exceeds the channel capacity")]
    InfeasiblePlan,
    #[error("plan file: {0}")]
    File(String),
}
