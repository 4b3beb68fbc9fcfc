//! Partition a sequential CNN into contiguous layer groups, run the groups as
//! a multi-process inference pipeline, and predict or simulate its throughput.

pub mod bench;
pub mod cnn;
pub mod partition;
pub mod runtime;
pub mod sim;
