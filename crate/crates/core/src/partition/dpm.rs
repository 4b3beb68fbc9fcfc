//! Dynamic partitioning: balance MACs across workers, respect the channel
//! capacity at every cut, then refine against the cost model.

use serde::Serialize;

use super::{CostModel, Feasibility, LayerProfile, PartitionError, PartitionPlan};

/// Inputs to [`dpm_partition`].
#[derive(Debug, Clone)]
pub struct PartitionRequest {
    pub profile: LayerProfile,
    pub num_workers: usize,
    /// Largest tensor, in elements, a link may carry per image.
    pub channel_capacity: u64,
    pub cost_model: CostModel,
}

impl PartitionRequest {
    pub fn validate(&self) -> Result<(), PartitionError> {
        let layers = self.profile.num_layers();
        if self.num_workers == 0 || self.num_workers > layers {
            return Err(PartitionError::InfeasibleRequest {
                workers: self.num_workers,
                layers,
            });
        }
        if self.channel_capacity == 0 {
            return Err(PartitionError::InvalidCost(
                "channel capacity must be >= 1".into(),
            ));
        }
        self.cost_model.validate()
    }
}

/// The plan after each step of [`dpm_partition`].
#[derive(Debug, Clone, Serialize)]
pub struct DpmTrace {
    pub balanced: PartitionPlan,
    pub bandwidth_enforced: PartitionPlan,
    pub locally_refined: PartitionPlan,
    pub result: PartitionPlan,
}

/// Greedy left-to-right placement of `num_workers - 1` cuts.
///
/// Cut `j` goes to the boundary whose cumulative MAC count is closest to
/// `j * total / num_workers`, ties going to the smaller tensor and then the
/// earlier boundary. Each cut leaves at least one layer for every stage
/// still to be placed.
pub fn balanced_cuts(
    profile: &LayerProfile,
    num_workers: usize,
) -> Result<PartitionPlan, PartitionError> {
    let layers = profile.num_layers();
    if num_workers == 0 || num_workers > layers {
        return Err(PartitionError::InfeasibleRequest {
            workers: num_workers,
            layers,
        });
    }
    let prefix = profile.prefix_macs();
    let total = profile.total_macs() as u128;
    let w = num_workers as u128;
    let mut cuts = Vec::with_capacity(num_workers - 1);
    let mut prev = 0;
    for j in 1..num_workers {
        let target = total * j as u128; // scaled by num_workers
        let last_allowed = layers - (num_workers - j);
        let best = (prev + 1..=last_allowed)
            .min_by_key(|&c| {
                let scaled = prefix[c] as u128 * w;
                (scaled.abs_diff(target), profile.cut_size(c), c)
            })
            .expect("range is non-empty while workers <= layers");
        cuts.push(best);
        prev = best;
    }
    PartitionPlan::from_cuts(profile, cuts)
}

/// Moves every cut whose tensor exceeds `channel_capacity` to the nearest
/// later boundary that fits (before the next cut), falling back to the
/// nearest earlier one (after the previous cut). Cuts with no fitting
/// position stay put and the plan comes back marked infeasible.
pub fn enforce_bandwidth(
    plan: &PartitionPlan,
    channel_capacity: u64,
    profile: &LayerProfile,
) -> Result<PartitionPlan, PartitionError> {
    let layers = profile.num_layers();
    let mut cuts = plan.cuts.clone();
    for j in 0..cuts.len() {
        let c = cuts[j];
        if profile.cut_size(c) <= channel_capacity {
            continue;
        }
        let lo = if j == 0 { 1 } else { cuts[j - 1] + 1 };
        let hi = cuts.get(j + 1).map_or(layers - 1, |&next| next - 1);
        let fits = |b: &usize| profile.cut_size(*b) <= channel_capacity;
        if let Some(b) = (c + 1..=hi).find(fits).or_else(|| (lo..c).rev().find(fits)) {
            cuts[j] = b;
        }
    }
    Ok(PartitionPlan::from_cuts(profile, cuts)?.with_capacity(channel_capacity))
}

fn score(profile: &LayerProfile, cost: &CostModel, cuts: &[usize]) -> (f64, u64) {
    let comm = cuts.iter().map(|&c| profile.cut_size(c)).sum();
    (cost.bottleneck(profile, cuts), comm)
}

fn improves(candidate: (f64, u64), current: (f64, u64)) -> bool {
    candidate.0 < current.0 || (candidate.0 == current.0 && candidate.1 < current.1)
}

/// Repeatedly shifts single cuts by one boundary while that lowers the
/// bottleneck period (or keeps it and sends fewer elements).
pub fn refine_locally(
    plan: &PartitionPlan,
    profile: &LayerProfile,
    channel_capacity: u64,
    cost: &CostModel,
) -> Result<PartitionPlan, PartitionError> {
    let layers = profile.num_layers();
    let fits = |cuts: &[usize]| {
        cuts.iter()
            .all(|&c| profile.cut_size(c) <= channel_capacity)
    };
    let mut cuts = plan.cuts.clone();
    let mut current = score(profile, cost, &cuts);
    let mut current_fits = fits(&cuts);
    loop {
        let mut best: Option<(Vec<usize>, (f64, u64))> = None;
        for j in 0..cuts.len() {
            for delta in [-1isize, 1] {
                let moved = cuts[j] as isize + delta;
                let lo = if j == 0 { 1 } else { cuts[j - 1] + 1 };
                let hi = cuts.get(j + 1).map_or(layers - 1, |&n| n - 1);
                if moved < lo as isize || moved > hi as isize {
                    continue;
                }
                let mut candidate = cuts.clone();
                candidate[j] = moved as usize;
                if !fits(&candidate) {
                    continue;
                }
                let s = score(profile, cost, &candidate);
                // an infeasible start accepts any feasible neighbour
                let accept = !current_fits || improves(s, current);
                if accept && best.as_ref().is_none_or(|(_, b)| improves(s, *b)) {
                    best = Some((candidate, s));
                }
            }
        }
        match best {
            Some((next, s)) => {
                cuts = next;
                current = s;
                current_fits = true;
            }
            None => break,
        }
    }
    Ok(PartitionPlan::from_cuts(profile, cuts)?.with_capacity(channel_capacity))
}

/// Exact search for the smallest bottleneck period over all feasible
/// contiguous plans, by dynamic programming over (stages used, layers
/// covered). Among optimal periods it keeps the fewest communicated
/// elements, then the lexicographically earliest cuts. `None` when no
/// feasible plan exists.
pub fn optimal_cuts(
    profile: &LayerProfile,
    num_workers: usize,
    channel_capacity: u64,
    cost: &CostModel,
) -> Option<Vec<usize>> {
    let layers = profile.num_layers();
    let fits = |cut: usize| cut == layers || profile.cut_size(cut) <= channel_capacity;

    // period[j][e]: best bottleneck covering layers 0..e with j stages
    let mut period = vec![vec![f64::INFINITY; layers + 1]; num_workers + 1];
    period[0][0] = 0.0;
    for j in 1..=num_workers {
        for e in j..=layers {
            if !fits(e) {
                continue;
            }
            for s in (j - 1)..e {
                let prev = period[j - 1][s];
                if prev.is_infinite() {
                    continue;
                }
                let candidate = prev.max(cost.stage_time(profile, s, e));
                if candidate < period[j][e] {
                    period[j][e] = candidate;
                }
            }
        }
    }
    let bound = period[num_workers][layers];
    if bound.is_infinite() {
        return None;
    }

    // second pass: fewest elements sent, restricted to stages within bound
    // cheapest (elements sent, cuts) reaching layer e with j stages
    type Cell = Option<(u64, Vec<usize>)>;
    let mut best: Vec<Vec<Cell>> = vec![vec![None; layers + 1]; num_workers + 1];
    best[0][0] = Some((0, Vec::new()));
    for j in 1..=num_workers {
        for e in j..=layers {
            if !fits(e) {
                continue;
            }
            let mut cell: Cell = None;
            for (s, prev) in best[j - 1].iter().enumerate().take(e).skip(j - 1) {
                let Some((comm, cuts)) = prev else {
                    continue;
                };
                if cost.stage_time(profile, s, e) > bound {
                    continue;
                }
                let mut next_cuts = cuts.clone();
                let mut next_comm = *comm;
                if e < layers {
                    next_cuts.push(e);
                    next_comm += profile.cut_size(e);
                }
                let take = match &cell {
                    None => true,
                    Some((c, v)) => next_comm < *c || (next_comm == *c && next_cuts < *v),
                };
                if take {
                    cell = Some((next_comm, next_cuts));
                }
            }
            best[j][e] = cell;
        }
    }
    best[num_workers][layers].take().map(|(_, cuts)| cuts)
}

/// Runs every step and records the plan after each.
pub fn dpm_trace(request: &PartitionRequest) -> Result<DpmTrace, PartitionError> {
    request.validate()?;
    let profile = &request.profile;
    let capacity = request.channel_capacity;
    let cost = &request.cost_model;

    let balanced = balanced_cuts(profile, request.num_workers)?;
    let bandwidth_enforced = enforce_bandwidth(&balanced, capacity, profile)?;
    let locally_refined = refine_locally(&bandwidth_enforced, profile, capacity, cost)?;

    let result = match optimal_cuts(profile, request.num_workers, capacity, cost) {
        Some(cuts) => {
            let local = score(profile, cost, &locally_refined.cuts);
            let global = score(profile, cost, &cuts);
            if !locally_refined.is_feasible() || improves(global, local) {
                PartitionPlan::from_cuts(profile, cuts)?.with_capacity(capacity)
            } else {
                locally_refined.clone()
            }
        }
        None => {
            let mut plan = bandwidth_enforced.clone();
            plan.feasibility = Feasibility::Infeasible;
            plan
        }
    };
    Ok(DpmTrace {
        balanced,
        bandwidth_enforced,
        locally_refined,
        result,
    })
}

/// Partitions `request.profile` across `request.num_workers` stages.
///
/// A request no plan can satisfy yields a plan marked infeasible (the
/// bandwidth-adjusted balanced plan) rather than an error, so callers can
/// see which cut is over capacity.
pub fn dpm_partition(request: &PartitionRequest) -> Result<PartitionPlan, PartitionError> {
    dpm_trace(request).map(|t| t.result)
}
