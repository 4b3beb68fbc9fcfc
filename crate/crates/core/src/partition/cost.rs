use serde::{Deserialize, Serialize};

use super::{LayerProfile, PartitionError, PartitionPlan};

/// Linear timing model: compute time proportional to MACs, transfer time an
/// affine function of the element count crossing a cut. All values in
/// seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub time_per_mac: f64,
    #[serde(default)]
    pub channel_latency: f64,
    #[serde(default)]
    pub channel_seconds_per_element: f64,
}

impl CostModel {
    pub fn new(
        time_per_mac: f64,
        channel_latency: f64,
        channel_seconds_per_element: f64,
    ) -> Result<Self, PartitionError> {
        let model = Self {
            time_per_mac,
            channel_latency,
            channel_seconds_per_element,
        };
        model.validate()?;
        Ok(model)
    }

    /// Free channels; only compute costs time.
    pub fn compute_only(time_per_mac: f64) -> Self {
        Self {
            time_per_mac,
            channel_latency: 0.0,
            channel_seconds_per_element: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.time_per_mac) && self.time_per_mac > 0.0) {
            return Err(PartitionError::InvalidCost(format!(
                "time_per_mac must be positive and finite, got {}",
                self.time_per_mac
            )));
        }
        if !ok(self.channel_latency) || !ok(self.channel_seconds_per_element) {
            return Err(PartitionError::InvalidCost(
                "channel parameters must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn compute_time(&self, macs: u64) -> f64 {
        macs as f64 * self.time_per_mac
    }

    pub fn comm_time(&self, elements: u64) -> f64 {
        self.channel_latency + elements as f64 * self.channel_seconds_per_element
    }

    /// Per-image time of the stage running layers `start..end`: its compute
    /// plus, unless it is the last stage, sending its output downstream.
    ///
    /// Every partitioner and the predictor score stages through this one
    /// function so their periods compare exactly.
    pub fn stage_time(&self, profile: &LayerProfile, start: usize, end: usize) -> f64 {
        let compute = self.compute_time(profile.range_macs(start, end));
        if end < profile.num_layers() {
            compute + self.comm_time(profile.cut_size(end))
        } else {
            compute
        }
    }

    /// Largest stage time of the plan given by `cuts`.
    pub fn bottleneck(&self, profile: &LayerProfile, cuts: &[usize]) -> f64 {
        stage_bounds(cuts, profile.num_layers())
            .map(|(s, e)| self.stage_time(profile, s, e))
            .fold(0.0, f64::max)
    }
}

/// `(start, end)` layer ranges of the stages delimited by `cuts`.
pub fn stage_bounds(
    cuts: &[usize],
    num_layers: usize,
) -> impl Iterator<Item = (usize, usize)> + '_ {
    let starts = std::iter::once(0).chain(cuts.iter().copied());
    let ends = cuts.iter().copied().chain(std::iter::once(num_layers));
    starts.zip(ends)
}

/// Analytic timing of a plan under a cost model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StagePrediction {
    pub stage_compute: Vec<f64>,
    pub cut_comm: Vec<f64>,
    /// Max over stages of compute plus outgoing communication.
    pub period: f64,
    /// Images per second in steady state.
    pub throughput: f64,
    /// Single-device compute time over the period.
    pub throughput_ratio: f64,
    /// Time for one image to traverse every stage and link.
    pub fill_time: f64,
    pub n_images: u64,
    pub makespan: f64,
}

impl StagePrediction {
    pub fn makespan_for(&self, n_images: u64) -> f64 {
        if n_images == 0 {
            0.0
        } else {
            self.fill_time + (n_images - 1) as f64 * self.period
        }
    }
}

pub fn predict(
    plan: &PartitionPlan,
    profile: &LayerProfile,
    cost: &CostModel,
    n_images: u64,
) -> Result<StagePrediction, PartitionError> {
    if plan.feasibility == super::Feasibility::Infeasible {
        return Err(PartitionError::InfeasiblePlan);
    }
    cost.validate()?;
    if plan.num_layers != profile.num_layers() {
        return Err(PartitionError::InvalidCuts(format!(
            "plan covers {} layers, profile has {}",
            plan.num_layers,
            profile.num_layers()
        )));
    }
    let stage_compute: Vec<f64> = plan
        .stage_macs
        .iter()
        .map(|&m| cost.compute_time(m))
        .collect();
    let cut_comm: Vec<f64> = plan.cut_sizes.iter().map(|&s| cost.comm_time(s)).collect();
    let period = cost.bottleneck(profile, &plan.cuts);
    let fill_time = stage_compute.iter().sum::<f64>() + cut_comm.iter().sum::<f64>();
    let total_compute = cost.compute_time(profile.total_macs());
    let mut prediction = StagePrediction {
        stage_compute,
        cut_comm,
        period,
        throughput: 1.0 / period,
        throughput_ratio: total_compute / period,
        fill_time,
        n_images,
        makespan: 0.0,
    };
    prediction.makespan = prediction.makespan_for(n_images);
    Ok(prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::lenet::reference_table;

    fn lenet() -> LayerProfile {
        LayerProfile::from_reference(&reference_table())
    }

    #[test]
    fn validation() {
        assert!(CostModel::new(0.0, 0.0, 0.0).is_err());
        assert!(CostModel::new(1e-9, -1.0, 0.0).is_err());
        assert!(CostModel::new(1e-9, 0.0, f64::NAN).is_err());
        assert!(CostModel::new(1e-9, 1e-3, 1e-6).is_ok());
    }

    #[test]
    fn single_stage_makespan() {
        let p = lenet();
        let cost = CostModel::compute_only(5.401e-3 / 286120.0);
        let plan = PartitionPlan::from_cuts(&p, vec![]).unwrap();
        let pred = predict(&plan, &p, &cost, 100).unwrap();
        assert!((pred.period - 5.401e-3).abs() < 1e-12);
        assert!((pred.makespan - 0.5401).abs() < 1e-9);
        assert!((pred.throughput_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_stages_give_ideal_ratio() {
        let p = LayerProfile::new("flat", vec![100; 6], vec![5; 6]).unwrap();
        let cost = CostModel::compute_only(1e-6);
        for (w, cuts) in [(2, vec![3]), (3, vec![2, 4]), (6, vec![1, 2, 3, 4, 5])] {
            let plan = PartitionPlan::from_cuts(&p, cuts).unwrap();
            let pred = predict(&plan, &p, &cost, 10).unwrap();
            assert!((pred.throughput_ratio - w as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn makespan_increments_by_period() {
        let p = lenet();
        let cost = CostModel::new(2e-8, 1e-3, 5e-7).unwrap();
        let plan = PartitionPlan::from_cuts(&p, vec![2, 4]).unwrap();
        let pred = predict(&plan, &p, &cost, 0).unwrap();
        assert_eq!(pred.makespan, 0.0);
        let sum: f64 = pred.stage_compute.iter().chain(&pred.cut_comm).sum();
        assert!((pred.makespan_for(1) - sum).abs() < 1e-15);
        for n in 1..20 {
            let d = pred.makespan_for(n + 1) - pred.makespan_for(n);
            assert!((d - pred.period).abs() < 1e-12);
        }
        assert!(pred.stage_compute.iter().all(|&c| c <= pred.period));
    }

    #[test]
    fn rejects_infeasible() {
        let p = lenet();
        let plan = PartitionPlan::from_cuts(&p, vec![1])
            .unwrap()
            .with_capacity(10);
        assert!(matches!(
            predict(&plan, &p, &CostModel::compute_only(1e-9), 5),
            Err(PartitionError::InfeasiblePlan)
        ));
    }
}
