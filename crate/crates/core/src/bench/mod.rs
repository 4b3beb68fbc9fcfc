//! Scenario catalog, benchmark harness and report generation.

pub mod calibration;
pub mod catalog;
mod harness;
mod report;

pub use calibration::{calibrate_reference, CostModelSet, ReferenceTiming, REFERENCE_TIMINGS};
pub use catalog::{find_scenario, scenario_catalog, select_scenarios, Scenario, LAYER_NAMES};
pub use harness::{bench, image_sweep, write_rows, BenchConfig, BenchMode, BenchRow, CSV_COLUMNS};
pub use report::{
    figure_series, read_rows, read_rows_file, rows_for_mode, summarize, summary_markdown,
    write_report, Summary, SummaryCell,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: crate::runtime::RuntimeError,
    },
    #[error("scenario {scenario}: image {image_id} differs from monolithic inference")]
    Mismatch { scenario: String, image_id: usize },
    #[error("simulate mode needs a cost model")]
    MissingCostModel,
    #[error("{0}")]
    Config(String),
    #[error("{file}, line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Partition(#[from] crate::partition::PartitionError),
    #[error(transparent)]
    Cnn(#[from] crate::cnn::CnnError),
}
