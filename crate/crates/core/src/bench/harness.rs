use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::calibration::CostModelSet;
use super::catalog::{find_scenario, Scenario};
use super::BenchError;
use crate::cnn::{build_lenet, forward_model, synthetic_images, Weights};
use crate::partition::LayerProfile;
use crate::runtime::{run_local_processes, PipelineStats, RequesterConfig};
use crate::sim::{simulate, Overlap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    LocalProcesses,
    Simulate,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::LocalProcesses => "local-processes",
            BenchMode::Simulate => "simulate",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local-processes" => Ok(BenchMode::LocalProcesses),
            "simulate" => Ok(BenchMode::Simulate),
            _ => Err(format!(
                "unknown mode {s:?}; expected local-processes or simulate"
            )),
        }
    }
}

/// One CSV row. Ratios compare against I.1 at the same image count and
/// mode; they are empty when undefined (no images, or a single image for
/// the steady ratio).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub mode: BenchMode,
    pub workers: usize,
    pub n_images: usize,
    pub makespan_ms: f64,
    pub time_per_image_ms: Option<f64>,
    /// I.1 makespan over this makespan.
    pub throughput_ratio: Option<f64>,
    /// I.1 completion spacing over this one's.
    pub steady_ratio: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 8] = [
    "scenario",
    "mode",
    "workers",
    "n_images",
    "makespan_ms",
    "time_per_image_ms",
    "throughput_ratio",
    "steady_ratio",
];

/// Image counts covering both plotted ranges: 100 to 1000 by 100 and
/// 1000 to 10000 by 1000.
pub fn image_sweep() -> Vec<usize> {
    (1..=10)
        .map(|k| k * 100)
        .chain((2..=10).map(|k| k * 1000))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub cost_models: Option<CostModelSet>,
    /// Overrides the cost model file's mode when set.
    pub overlap: Option<Overlap>,
    /// The `pipecnn` executable used for worker processes.
    pub worker_exe: Option<PathBuf>,
    pub seed: u64,
    /// Check every distributed output against monolithic inference.
    pub verify: bool,
    pub requester: RequesterConfig,
}

impl BenchConfig {
    pub fn simulate(cost_models: CostModelSet) -> Self {
        Self {
            mode: BenchMode::Simulate,
            cost_models: Some(cost_models),
            overlap: None,
            worker_exe: None,
            seed: 1,
            verify: false,
            requester: RequesterConfig::default(),
        }
    }

    pub fn local_processes(worker_exe: PathBuf) -> Self {
        Self {
            mode: BenchMode::LocalProcesses,
            cost_models: None,
            overlap: None,
            worker_exe: Some(worker_exe),
            seed: 1,
            verify: true,
            requester: RequesterConfig::default(),
        }
    }
}

fn run_one(
    scenario: &Scenario,
    n: usize,
    config: &BenchConfig,
) -> Result<PipelineStats, BenchError> {
    let (model, _) = build_lenet();
    let profile = LayerProfile::from_model(&model);
    let plan = scenario.plan(&profile)?;
    match config.mode {
        BenchMode::Simulate => {
            let set = config
                .cost_models
                .as_ref()
                .ok_or(BenchError::MissingCostModel)?;
            let overlap = config.overlap.or(set.overlap).unwrap_or_default();
            Ok(simulate(
                &plan,
                set.for_workers(scenario.workers),
                n,
                overlap,
            ))
        }
        BenchMode::LocalProcesses => {
            let exe = config.worker_exe.as_ref().ok_or_else(|| {
                BenchError::Config("local-processes mode needs the worker executable".into())
            })?;
            let weights = Weights::seeded(&model, config.seed);
            let images = synthetic_images(model.input_shape(), n, config.seed.wrapping_add(1));
            let run = run_local_processes(exe, &model, &weights, &plan, &images, &config.requester)
                .map_err(|source| BenchError::Scenario {
                    scenario: scenario.id.clone(),
                    source,
                })?;
            if config.verify {
                for (id, (image, out)) in images.iter().zip(&run.outputs).enumerate() {
                    if *out != forward_model(&model, &weights, image, 0..model.len())? {
                        return Err(BenchError::Mismatch {
                            scenario: scenario.id.clone(),
                            image_id: id,
                        });
                    }
                }
            }
            Ok(run.stats)
        }
    }
}

/// Runs every scenario at every image count. I.1 is measured as the
/// reference for each count even when it is not among `scenarios`.
pub fn bench(
    scenarios: &[Scenario],
    n_images: &[usize],
    config: &BenchConfig,
) -> Result<Vec<BenchRow>, BenchError> {
    let baseline_scenario = find_scenario("I.1").expect("catalog has I.1");
    let mut rows = Vec::new();
    for &n in n_images {
        log::info!("{} images, {} mode", n, config.mode);
        let baseline = run_one(&baseline_scenario, n, config)?;
        for s in scenarios {
            let stats = if s.id == baseline_scenario.id {
                baseline.clone()
            } else {
                run_one(s, n, config)?
            };
            rows.push(row(s, n, config.mode, &stats, &baseline));
        }
    }
    Ok(rows)
}

fn row(
    s: &Scenario,
    n: usize,
    mode: BenchMode,
    stats: &PipelineStats,
    baseline: &PipelineStats,
) -> BenchRow {
    let ratio = |a: f64, b: f64| (a > 0.0 && b > 0.0).then(|| a / b);
    BenchRow {
        scenario: s.id.clone(),
        mode,
        workers: s.workers,
        n_images: n,
        makespan_ms: stats.makespan * 1e3,
        time_per_image_ms: (n > 0).then(|| stats.makespan * 1e3 / n as f64),
        throughput_ratio: ratio(baseline.makespan, stats.makespan),
        steady_ratio: match (baseline.steady_period(), stats.steady_period()) {
            (Some(a), Some(b)) => ratio(a, b),
            _ => None,
        },
    }
}

/// Header always written, even with no rows.
pub fn write_rows(rows: &[BenchRow], w: impl Write) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
