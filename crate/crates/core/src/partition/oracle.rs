use super::{CostModel, LayerProfile, PartitionError, PartitionPlan};

/// Largest number of contiguous partitions the oracle will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// C(n, k) without overflow for the sizes the oracle accepts.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Calls `visit` with every strictly increasing choice of `k` cuts from
/// `1..layers`, in lexicographic order.
pub fn for_each_cut_set(layers: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k == 0 {
        visit(&[]);
        return;
    }
    if k > layers.saturating_sub(1) {
        return;
    }
    let mut cuts: Vec<usize> = (1..=k).collect();
    loop {
        visit(&cuts);
        // rightmost position that can still advance; position i tops out at
        // layers - k + i
        let Some(i) = (0..k).rev().find(|&i| cuts[i] < layers - (k - i)) else {
            return;
        };
        cuts[i] += 1;
        for j in i + 1..k {
            cuts[j] = cuts[j - 1] + 1;
        }
    }
}

/// Exhaustive search over all contiguous `num_workers`-stage plans.
///
/// Returns the feasible plan with the smallest bottleneck period, ties
/// broken by fewest communicated elements and then by the lexicographically
/// earliest cuts. When no plan fits the channel, the best plan ignoring the
/// capacity is returned marked infeasible.
pub fn brute_force_partition(
    profile: &LayerProfile,
    num_workers: usize,
    channel_capacity: u64,
    cost: &CostModel,
) -> Result<PartitionPlan, PartitionError> {
    let layers = profile.num_layers();
    if num_workers == 0 || num_workers > layers {
        return Err(PartitionError::InfeasibleRequest {
            workers: num_workers,
            layers,
        });
    }
    cost.validate()?;
    let count = binomial(layers - 1, num_workers - 1);
    if count > ENUMERATION_LIMIT {
        return Err(PartitionError::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }

    type Best = Option<(f64, u64, Vec<usize>)>;
    let better = |best: &Best, period: f64, comm: u64| match best {
        None => true,
        Some((p, c, _)) => period < *p || (period == *p && comm < *c),
    };
    let mut best_feasible: Best = None;
    let mut best_any: Best = None;
    for_each_cut_set(layers, num_workers - 1, |cuts| {
        let period = cost.bottleneck(profile, cuts);
        let comm: u64 = cuts.iter().map(|&c| profile.cut_size(c)).sum();
        let fits = cuts
            .iter()
            .all(|&c| profile.cut_size(c) <= channel_capacity);
        if fits && better(&best_feasible, period, comm) {
            best_feasible = Some((period, comm, cuts.to_vec()));
        }
        if better(&best_any, period, comm) {
            best_any = Some((period, comm, cuts.to_vec()));
        }
    });

    let (cuts, _) = match (best_feasible, best_any) {
        (Some((_, _, cuts)), _) => (cuts, true),
        (None, Some((_, _, cuts))) => (cuts, false),
        (None, None) => unreachable!("at least one plan exists when workers <= layers"),
    };
    Ok(PartitionPlan::from_cuts(profile, cuts)?.with_capacity(channel_capacity))
}
