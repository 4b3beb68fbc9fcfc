//! Browser demo: the LeNet layer table, the partitioner and the pipeline
//! simulator, exposed to JavaScript as JSON-returning functions.
//!
//! The `*_json` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use pipecnn::bench::{image_sweep, CostModelSet};
use pipecnn::cnn::build_lenet;
use pipecnn::partition::{
    dpm_trace, predict, CostModel, LayerProfile, PartitionPlan, PartitionRequest,
};
use pipecnn::sim::{simulate, Overlap};

const CALIBRATED: &str = include_str!("../../core/fixtures/lenet_calibrated.toml");

#[derive(Serialize)]
struct LayerRow {
    name: String,
    shape: String,
    macs: u64,
    table_macs: u64,
    output_size: u64,
}

#[derive(Serialize)]
struct Step {
    step: &'static str,
    cuts: Vec<usize>,
    cut_sizes: Vec<u64>,
    bottleneck_ms: f64,
}

#[derive(Serialize)]
struct PartitionView {
    steps: Vec<Step>,
    feasible: bool,
    stages: Vec<String>,
    stage_compute_ms: Vec<f64>,
    cut_comm_ms: Vec<f64>,
    period_ms: Option<f64>,
    throughput_ratio: Option<f64>,
}

#[derive(Serialize)]
struct CurvePoint {
    n_images: usize,
    baseline_ms: f64,
    pipelined_ms: f64,
    ratio: f64,
}

fn lenet_profile() -> LayerProfile {
    LayerProfile::from_model(&build_lenet().0)
}

fn calibrated() -> CostModelSet {
    CostModelSet::from_toml(CALIBRATED).expect("shipped cost models parse")
}

/// Cost model for `workers`: the calibrated one, unless the caller gives
/// a nonnegative time per MAC, in which case all three values are used.
fn cost_for(
    workers: usize,
    time_per_mac: f64,
    latency: f64,
    per_element: f64,
) -> Result<CostModel, String> {
    if time_per_mac < 0.0 {
        return Ok(*calibrated().for_workers(workers));
    }
    CostModel::new(time_per_mac, latency, per_element).map_err(|e| e.to_string())
}

pub fn layer_table_json() -> String {
    let (model, table) = build_lenet();
    let rows: Vec<LayerRow> = model
        .layers()
        .iter()
        .zip(model.layer_macs())
        .zip(&table.rows)
        .enumerate()
        .map(|(i, ((layer, macs), row))| LayerRow {
            name: format!("{} {}", row.label, layer.name()),
            shape: model.shape_after(i).to_string(),
            macs,
            table_macs: row.macs,
            output_size: model.shape_after(i).element_count(),
        })
        .collect();
    serde_json::to_string(&rows).unwrap()
}

pub fn partition_json(
    workers: usize,
    capacity: u64,
    time_per_mac: f64,
    latency: f64,
    per_element: f64,
) -> Result<String, String> {
    let profile = lenet_profile();
    let cost = cost_for(workers, time_per_mac, latency, per_element)?;
    let request = PartitionRequest {
        profile: profile.clone(),
        num_workers: workers,
        channel_capacity: capacity.max(1),
        cost_model: cost,
    };
    let trace = dpm_trace(&request).map_err(|e| e.to_string())?;
    let step = |step, plan: &PartitionPlan| Step {
        step,
        cuts: plan.cuts.clone(),
        cut_sizes: plan.cut_sizes.clone(),
        bottleneck_ms: cost.bottleneck(&profile, &plan.cuts) * 1e3,
    };
    let steps = vec![
        step("balanced", &trace.balanced),
        step("capacity", &trace.bandwidth_enforced),
        step("refined", &trace.locally_refined),
        step("result", &trace.result),
    ];
    let plan = &trace.result;
    let stages = plan
        .stage_ranges()
        .iter()
        .map(|&(a, b)| {
            (a..b)
                .map(|l| profile.label(l))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let mut view = PartitionView {
        steps,
        feasible: plan.is_feasible(),
        stages,
        stage_compute_ms: vec![],
        cut_comm_ms: vec![],
        period_ms: None,
        throughput_ratio: None,
    };
    if let Ok(p) = predict(plan, &profile, &cost, 100) {
        view.stage_compute_ms = p.stage_compute.iter().map(|t| t * 1e3).collect();
        view.cut_comm_ms = p.cut_comm.iter().map(|t| t * 1e3).collect();
        view.period_ms = Some(p.period * 1e3);
        // against one device under its own calibration, as the CLI does
        let single = cost_for(1, time_per_mac, latency, per_element)?;
        view.throughput_ratio = Some(single.compute_time(profile.total_macs()) / p.period);
    }
    Ok(serde_json::to_string(&view).unwrap())
}

/// Simulated makespans of a cut list against the single-device baseline,
/// over the benchmark's image counts up to `max_images`.
pub fn throughput_curve_json(
    cuts: &[usize],
    overlap: &str,
    max_images: usize,
) -> Result<String, String> {
    let profile = lenet_profile();
    let set = calibrated();
    let overlap: Overlap = if overlap.is_empty() {
        set.overlap.unwrap_or_default()
    } else {
        overlap.parse()?
    };
    let plan = PartitionPlan::from_cuts(&profile, cuts.to_vec()).map_err(|e| e.to_string())?;
    let single = PartitionPlan::from_cuts(&profile, vec![]).unwrap();
    let cost = set.for_workers(plan.num_stages());
    let points: Vec<CurvePoint> = image_sweep()
        .into_iter()
        .filter(|&n| n <= max_images)
        .map(|n| {
            let base = simulate(&single, set.for_workers(1), n, overlap).makespan;
            let piped = simulate(&plan, cost, n, overlap).makespan;
            CurvePoint {
                n_images: n,
                baseline_ms: base * 1e3,
                pipelined_ms: piped * 1e3,
                ratio: base / piped,
            }
        })
        .collect();
    Ok(serde_json::to_string(&points).unwrap())
}

#[wasm_bindgen]
pub fn layer_table() -> String {
    layer_table_json()
}

/// Pass a negative `time_per_mac` to use the calibrated cost models.
#[wasm_bindgen]
pub fn partition(
    workers: usize,
    capacity: f64,
    time_per_mac: f64,
    latency: f64,
    per_element: f64,
) -> Result<String, JsError> {
    let capacity = if capacity.is_finite() && capacity < u64::MAX as f64 {
        capacity as u64
    } else {
        u64::MAX
    };
    partition_json(workers, capacity, time_per_mac, latency, per_element)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn throughput_curve(
    cuts: Vec<u32>,
    overlap: &str,
    max_images: usize,
) -> Result<String, JsError> {
    let cuts: Vec<usize> = cuts.into_iter().map(|c| c as usize).collect();
    throughput_curve_json(&cuts, overlap, max_images).map_err(|e| JsError::new(&e))
}
