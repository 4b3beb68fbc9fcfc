//! Running a partition plan as a real pipeline of workers.
//!
//! A requester holds one control link per worker. Stage 0 reads images
//! from its control link and the last stage writes results back on its
//! own; stages in between talk over data links they open themselves.

pub mod frame;
mod local;
mod requester;
mod stats;
pub mod transport;
mod worker;

use std::time::Duration;

pub use frame::{
    decode_frame, encode_frame, Frame, FrameError, LinkRole, MessageType, WorkerReport,
};
pub use local::{run_in_process, run_local_processes, WorkerProcess};
pub use requester::{build_assignments, run_pipeline, run_requester, PipelineRun, RequesterConfig};
pub use stats::PipelineStats;
pub use transport::{mem_duplex, Endpoint, LinkDelay};
pub use worker::{
    run_stage, serve_worker, serve_worker_stdout, worker_session, StageAssignment, StageError,
};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("stage {stage}: {message}")]
    Stage { stage: usize, message: String },
    #[error("timed out after {after:?} waiting for {waiting_for}")]
    Timeout {
        waiting_for: String,
        after: Duration,
    },
    #[error("result for image {got} arrived when {expected} was next")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    WorkerExited(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Cnn(#[from] crate::cnn::CnnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
