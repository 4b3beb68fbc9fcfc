use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::find_scenario;
use crate::partition::{CostModel, LayerProfile, PartitionError, PartitionPlan};
use crate::sim::Overlap;

/// Cost models keyed by worker count, with a fallback.
///
/// ```toml
/// overlap = "send-blocks-compute"   # optional
///
/// [default]
/// time_per_mac = 1.9e-8
/// channel_latency = 1.4e-3
/// channel_seconds_per_element = 7.9e-7
///
/// [by_workers.2]
/// time_per_mac = 1.5e-8
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<Overlap>,
    pub default: CostModel,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_workers: BTreeMap<String, CostModel>,
}

impl CostModelSet {
    pub fn single(model: CostModel) -> Self {
        Self {
            overlap: None,
            default: model,
            by_workers: BTreeMap::new(),
        }
    }

    pub fn for_workers(&self, workers: usize) -> &CostModel {
        self.by_workers
            .get(&workers.to_string())
            .unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        self.default.validate()?;
        for (k, m) in &self.by_workers {
            if k.parse::<usize>().is_err() {
                return Err(PartitionError::InvalidCost(format!(
                    "worker count key {k:?} is not a number"
                )));
            }
            m.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("cost models serialize")
    }

    /// Accepts a full set or a bare cost model table.
    pub fn from_toml(text: &str) -> Result<Self, PartitionError> {
        let set = match toml::from_str::<CostModelSet>(text) {
            Ok(set) => set,
            Err(set_err) => match toml::from_str::<CostModel>(text) {
                Ok(model) => Self::single(model),
                Err(_) => return Err(PartitionError::InvalidCost(set_err.to_string())),
            },
        };
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PartitionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PartitionError::InvalidCost(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Published single-image times and 100-image makespans for 1, 2 and 3
/// workers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTiming {
    pub case: &'static str,
    pub workers: usize,
    pub time_per_image_ms: f64,
    pub comm_ms: &'static [f64],
    pub throughput_pct: f64,
    pub makespan_ms: f64,
    /// Catalog case the published timing is attributed to.
    pub scenario: &'static str,
}

impl ReferenceTiming {
    pub const N_IMAGES: usize = 100;

    /// Per-image bottleneck implied by the makespan, in seconds.
    pub fn period(&self) -> f64 {
        self.makespan_ms / Self::N_IMAGES as f64 * 1e-3
    }
}

pub const REFERENCE_TIMINGS: [ReferenceTiming; 3] = [
    ReferenceTiming {
        case: "I",
        workers: 1,
        time_per_image_ms: 5.40,
        comm_ms: &[],
        throughput_pct: 100.0,
        makespan_ms: 540.103,
        scenario: "I.1",
    },
    ReferenceTiming {
        case: "II",
        workers: 2,
        time_per_image_ms: 3.48,
        comm_ms: &[2.13],
        throughput_pct: 155.0,
        makespan_ms: 347.780,
        scenario: "II.2",
    },
    ReferenceTiming {
        case: "III",
        workers: 3,
        time_per_image_ms: 3.09,
        comm_ms: &[2.13, 1.65],
        throughput_pct: 175.0,
        makespan_ms: 308.457,
        scenario: "III.1",
    },
];

/// Least-squares line through `(elements, seconds)` samples: returns
/// `(latency, seconds_per_element)`.
pub fn fit_channel(samples: &[(u64, f64)]) -> Result<(f64, f64), PartitionError> {
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 as f64 - mean_x).powi(2)).sum();
    if samples.len() < 2 || sxx == 0.0 {
        return Err(PartitionError::InvalidCost(
            "channel fit needs samples at two or more sizes".into(),
        ));
    }
    let sxy: f64 = samples
        .iter()
        .map(|s| (s.0 as f64 - mean_x) * (s.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    Ok((mean_y - slope * mean_x, slope))
}

/// Largest time per MAC at which no stage of `plan` exceeds `period`
/// (compute plus outgoing send); the slowest stage then takes exactly
/// `period`.
pub fn calibrate_time_per_mac(
    plan: &PartitionPlan,
    channel_latency: f64,
    channel_seconds_per_element: f64,
    period: f64,
) -> Result<f64, PartitionError> {
    let comm = |i: usize| {
        plan.cut_sizes.get(i).map_or(0.0, |&s| {
            channel_latency + s as f64 * channel_seconds_per_element
        })
    };
    let tpm = plan
        .stage_macs
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0)
        .map(|(i, &m)| (period - comm(i)) / m as f64)
        .fold(f64::INFINITY, f64::min);
    if tpm.is_finite() && tpm > 0.0 {
        Ok(tpm)
    } else {
        Err(PartitionError::InvalidCost(format!(
            "no positive time per MAC fits a {period} s period"
        )))
    }
}

/// Cost models that reproduce the published timings on LeNet.
///
/// The channel line goes through the two three-worker link times, taken
/// in link order against the III.1 cut sizes. Each worker count then gets
/// the time per MAC that makes its attributed case's bottleneck equal the
/// published period, with sends blocking compute.
pub fn calibrate_reference(profile: &LayerProfile) -> Result<CostModelSet, PartitionError> {
    let plan_for = |row: &ReferenceTiming| {
        find_scenario(row.scenario)
            .expect("reference scenarios are in the catalog")
            .plan(profile)
    };
    let three = &REFERENCE_TIMINGS[2];
    let samples: Vec<(u64, f64)> = plan_for(three)?
        .cut_sizes
        .iter()
        .zip(three.comm_ms)
        .map(|(&size, &ms)| (size, ms * 1e-3))
        .collect();
    let (latency, spe) = fit_channel(&samples)?;

    let mut by_workers = BTreeMap::new();
    for row in &REFERENCE_TIMINGS {
        let tpm = calibrate_time_per_mac(&plan_for(row)?, latency, spe, row.period())?;
        by_workers.insert(row.workers.to_string(), CostModel::new(tpm, latency, spe)?);
    }
    Ok(CostModelSet {
        overlap: Some(Overlap::SendBlocksCompute),
        default: by_workers["1"],
        by_workers,
    })
}
