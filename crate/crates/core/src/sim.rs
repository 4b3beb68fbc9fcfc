//! Discrete-event simulation of a partitioned pipeline under a cost model.
//!
//! Stages and links are servers that take images in order, one at a time.
//! Time is integer nanoseconds so event order never depends on rounding.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::partition::{predict, CostModel, LayerProfile, PartitionError, PartitionPlan};
use crate::runtime::PipelineStats;

/// Whether a stage may start its next image while its output is still on
/// the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overlap {
    /// The outgoing link is its own server; the stage is free after compute.
    #[default]
    SendOverlapsCompute,
    /// The stage stays busy until its output has been sent.
    SendBlocksCompute,
}

impl Overlap {
    pub const ALL: [Overlap; 2] = [Overlap::SendOverlapsCompute, Overlap::SendBlocksCompute];

    pub fn name(self) -> &'static str {
        match self {
            Overlap::SendOverlapsCompute => "send-overlaps-compute",
            Overlap::SendBlocksCompute => "send-blocks-compute",
        }
    }
}

impl fmt::Display for Overlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Overlap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Overlap::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown overlap mode {s:?}; expected send-overlaps-compute or send-blocks-compute"))
    }
}

/// Per-image service times of one stage, in nanoseconds. `send_ns` is zero
/// for the last stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageTiming {
    pub compute_ns: u64,
    pub send_ns: u64,
}

pub fn to_ns(seconds: f64) -> u64 {
    (seconds * 1e9).round().max(0.0) as u64
}

pub fn stage_timings(plan: &PartitionPlan, cost: &CostModel) -> Vec<StageTiming> {
    let sends = plan.cut_sizes.iter().map(|&s| to_ns(cost.comm_time(s)));
    plan.stage_macs
        .iter()
        .zip(sends.chain(std::iter::once(0)))
        .map(|(&m, send_ns)| StageTiming {
            compute_ns: to_ns(cost.compute_time(m)),
            send_ns,
        })
        .collect()
}

/// Raw simulation output. Image `k` enters stage 0 at `start_ns[k]` and
/// leaves the last stage at `completion_ns[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimTrace {
    pub start_ns: Vec<u64>,
    pub completion_ns: Vec<u64>,
    pub stage_busy_ns: Vec<u64>,
}

impl SimTrace {
    pub fn makespan_ns(&self) -> u64 {
        self.completion_ns.last().copied().unwrap_or(0)
    }
}

/// Servers in pipeline order and the stage each belongs to; links get
/// `None`.
fn servers(timings: &[StageTiming], overlap: Overlap) -> Vec<(u64, Option<usize>)> {
    let mut out = Vec::new();
    for (i, t) in timings.iter().enumerate() {
        match overlap {
            Overlap::SendBlocksCompute => out.push((t.compute_ns + t.send_ns, Some(i))),
            Overlap::SendOverlapsCompute => {
                out.push((t.compute_ns, Some(i)));
                if i + 1 < timings.len() {
                    out.push((t.send_ns, None));
                }
            }
        }
    }
    out
}

/// All `n_images` are available at time zero.
pub fn simulate_stages(timings: &[StageTiming], n_images: usize, overlap: Overlap) -> SimTrace {
    let mut trace = SimTrace {
        stage_busy_ns: vec![0; timings.len()],
        ..SimTrace::default()
    };
    if n_images == 0 || timings.is_empty() {
        return trace;
    }
    let servers = servers(timings, overlap);
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); servers.len()];
    queues[0].extend(0..n_images);
    let mut busy = vec![false; servers.len()];
    trace.start_ns = vec![0; n_images];
    trace.completion_ns = vec![0; n_images];

    // (finish time, server, image); ties resolve by server then image,
    // which never changes a result since servers only hand work forward
    let mut events: BinaryHeap<Reverse<(u64, usize, usize)>> = BinaryHeap::new();
    let mut now = 0u64;
    let start = |server: usize,
                 now: u64,
                 queues: &mut [VecDeque<usize>],
                 busy: &mut [bool],
                 events: &mut BinaryHeap<Reverse<(u64, usize, usize)>>,
                 trace: &mut SimTrace| {
        if busy[server] {
            return;
        }
        if let Some(image) = queues[server].pop_front() {
            busy[server] = true;
            if server == 0 {
                trace.start_ns[image] = now;
            }
            let (service, stage) = servers[server];
            if let Some(stage) = stage {
                trace.stage_busy_ns[stage] += service;
            }
            events.push(Reverse((now + service, server, image)));
        }
    };
    start(0, now, &mut queues, &mut busy, &mut events, &mut trace);
    while let Some(Reverse((t, server, image))) = events.pop() {
        debug_assert!(t >= now);
        now = t;
        busy[server] = false;
        if server + 1 < servers.len() {
            queues[server + 1].push_back(image);
            start(
                server + 1,
                now,
                &mut queues,
                &mut busy,
                &mut events,
                &mut trace,
            );
        } else {
            trace.completion_ns[image] = now;
        }
        start(server, now, &mut queues, &mut busy, &mut events, &mut trace);
    }
    trace
}

/// Simulated timing of `n_images` through `plan`.
///
/// `link_bytes` holds the payload bytes crossing each cut.
pub fn simulate(
    plan: &PartitionPlan,
    cost: &CostModel,
    n_images: usize,
    overlap: Overlap,
) -> PipelineStats {
    let trace = simulate_stages(&stage_timings(plan, cost), n_images, overlap);
    let secs = |v: &[u64]| v.iter().map(|&ns| ns as f64 * 1e-9).collect::<Vec<_>>();
    let link_bytes = plan
        .cut_sizes
        .iter()
        .map(|&s| 4 * s * n_images as u64)
        .collect();
    let mut stats = PipelineStats::from_times(
        secs(&trace.start_ns),
        secs(&trace.completion_ns),
        secs(&trace.stage_busy_ns),
        link_bytes,
    );
    stats.makespan = trace.makespan_ns() as f64 * 1e-9;
    stats
}

/// Outcome of comparing the send-blocks-compute simulation with the
/// closed-form makespan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticCheck {
    pub n_images: usize,
    pub simulated_s: f64,
    pub predicted_s: f64,
    pub period_s: f64,
    /// |simulated − predicted| in seconds.
    pub divergence_s: f64,
    /// Same comparison with the closed form evaluated on the nanosecond
    /// service times the simulator used; zero when the two agree exactly.
    pub divergence_ns: u64,
}

impl AnalyticCheck {
    pub fn within_one_period(&self) -> bool {
        self.divergence_s <= self.period_s
    }
}

impl fmt::Display for AnalyticCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} simulated={:.9}s predicted={:.9}s divergence={:.3e}s ({} ns on integer times) period={:.9}s",
            self.n_images, self.simulated_s, self.predicted_s, self.divergence_s, self.divergence_ns, self.period_s
        )
    }
}

/// The predictor charges each stage compute plus its outgoing send, which
/// is the send-blocks-compute pipeline, so that is what is simulated here.
pub fn validate_against_analytic(
    plan: &PartitionPlan,
    profile: &LayerProfile,
    cost: &CostModel,
    n_images: usize,
) -> Result<AnalyticCheck, PartitionError> {
    let prediction = predict(plan, profile, cost, n_images as u64)?;
    let timings = stage_timings(plan, cost);
    let trace = simulate_stages(&timings, n_images, Overlap::SendBlocksCompute);
    let simulated = trace.makespan_ns();
    let exact = if n_images == 0 {
        0
    } else {
        let services = timings.iter().map(|t| t.compute_ns + t.send_ns);
        let fill: u64 = services.clone().sum();
        fill + (n_images as u64 - 1) * services.max().unwrap_or(0)
    };
    let simulated_s = simulated as f64 * 1e-9;
    Ok(AnalyticCheck {
        n_images,
        simulated_s,
        predicted_s: prediction.makespan,
        period_s: prediction.period,
        divergence_s: (simulated_s - prediction.makespan).abs(),
        divergence_ns: simulated.abs_diff(exact),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::lenet::reference_table;
    use proptest::prelude::*;

    /// Textbook tandem-line recurrence: image k leaves server j at
    /// max(k leaves j−1, k−1 leaves j) + s_j.
    fn recurrence(services: &[u64], n: usize) -> Vec<u64> {
        let mut prev = vec![0u64; services.len()];
        let mut out = Vec::new();
        for _ in 0..n {
            let mut upstream = 0;
            for (j, &s) in services.iter().enumerate() {
                prev[j] = prev[j].max(upstream) + s;
                upstream = prev[j];
            }
            out.push(upstream);
        }
        out
    }

    fn timings(pairs: &[(u64, u64)]) -> Vec<StageTiming> {
        pairs
            .iter()
            .map(|&(compute_ns, send_ns)| StageTiming {
                compute_ns,
                send_ns,
            })
            .collect()
    }

    #[test]
    fn overlap_names_round_trip() {
        for o in Overlap::ALL {
            assert_eq!(o.name().parse::<Overlap>().unwrap(), o);
        }
        assert!("sideways".parse::<Overlap>().is_err());
    }

    #[test]
    fn single_stage_table_value() {
        let profile = LayerProfile::from_reference(&reference_table());
        let cost = CostModel::compute_only(5.401e-3 / 286120.0);
        let plan = PartitionPlan::from_cuts(&profile, vec![]).unwrap();
        let stats = simulate(&plan, &cost, 100, Overlap::default());
        assert!((stats.makespan - 0.5401).abs() < 1e-6);
    }

    #[test]
    fn zero_images() {
        let t = timings(&[(5, 3), (7, 0)]);
        for o in Overlap::ALL {
            let trace = simulate_stages(&t, 0, o);
            assert_eq!(trace.makespan_ns(), 0);
            assert!(trace.completion_ns.is_empty());
        }
    }

    #[test]
    fn skewed_stages_approach_slowest() {
        let t = timings(&[(1_000_000, 0), (9_000_000, 0)]);
        let mut last = 0.0;
        for n in [1, 10, 100, 1000, 10000] {
            let trace = simulate_stages(&t, n, Overlap::SendOverlapsCompute);
            let rate = n as f64 / trace.makespan_ns() as f64;
            assert!(rate >= last);
            last = rate;
        }
        assert!((last * 9e6 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lenet_two_workers_compute_only_exact() {
        let profile = LayerProfile::from_reference(&reference_table());
        let cost = CostModel::compute_only(1e-8);
        let plan = PartitionPlan::from_cuts(&profile, vec![2]).unwrap();
        for n in [1, 10, 100, 1000] {
            let check = validate_against_analytic(&plan, &profile, &cost, n).unwrap();
            assert_eq!(check.divergence_ns, 0, "{check}");
            assert!(check.divergence_s < 1e-9, "{check}");
        }
    }

    #[test]
    fn blocked_stage_holds_next_image() {
        // stage 0 computes 2 and sends 3; the link alone is the bottleneck
        let t = timings(&[(2, 3), (1, 0)]);
        let overlap = simulate_stages(&t, 3, Overlap::SendOverlapsCompute);
        assert_eq!(overlap.completion_ns, vec![6, 9, 12]);
        assert_eq!(overlap.start_ns, vec![0, 2, 4]);
        let blocks = simulate_stages(&t, 3, Overlap::SendBlocksCompute);
        assert_eq!(blocks.completion_ns, vec![6, 11, 16]);
        assert_eq!(blocks.start_ns, vec![0, 5, 10]);
        assert_eq!(blocks.stage_busy_ns, vec![15, 3]);
    }

    fn arb_timings() -> impl Strategy<Value = Vec<StageTiming>> {
        prop::collection::vec((1u64..5_000_000, 0u64..3_000_000), 1..6).prop_map(|v| {
            let last = v.len() - 1;
            v.into_iter()
                .enumerate()
                .map(|(i, (c, s))| StageTiming {
                    compute_ns: c,
                    send_ns: if i == last { 0 } else { s },
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_recurrence(t in arb_timings(), n in 0usize..60) {
            for o in Overlap::ALL {
                let services: Vec<u64> = servers(&t, o).into_iter().map(|s| s.0).collect();
                prop_assert_eq!(simulate_stages(&t, n, o).completion_ns, recurrence(&services, n));
            }
        }

        #[test]
        fn overlap_never_slower(t in arb_timings(), n in 0usize..60) {
            let a = simulate_stages(&t, n, Overlap::SendOverlapsCompute).makespan_ns();
            let b = simulate_stages(&t, n, Overlap::SendBlocksCompute).makespan_ns();
            prop_assert!(a <= b);
        }

        #[test]
        fn no_idle_with_work(t in arb_timings(), n in 1usize..40) {
            // stage 0 never waits for anything but itself under overlap
            let trace = simulate_stages(&t, n, Overlap::SendOverlapsCompute);
            for k in 1..n {
                prop_assert_eq!(trace.start_ns[k], k as u64 * t[0].compute_ns);
            }
        }
    }
}
