//! Budgeted greedy maximization of an [`AcquisitionFunction`].
//!
//! Three modes:
//!
//! - `Naive`: every remaining candidate is re-scored each step (scores run in
//!   parallel; the commit is sequential).
//! - `Lazy`: accelerated greedy over a max-heap of stale upper bounds. The
//!   top element is re-scored until every candidate whose bound could still
//!   tie has a fresh gain, which makes the selection identical to naive mode
//!   for functions with certified diminishing returns. Functions without the
//!   certificate (`lazy_safe() == false`) silently run naive.
//! - `Stochastic`: each step scores a random sample of
//!   `ceil((n / B) * ln(1 / epsilon))` remaining candidates, seeded and
//!   deterministic.
//!
//! Ties within `1e-12` resolve to the smallest point id in every mode.
//! Graph-cut kinds may stop before the budget is exhausted once the best
//! available gain is non-positive; this is reported via `stopped_early`.

use crate::error::{Error, Result};
use crate::ids::PointId;
use crate::kernels::partition_ground_set;
use crate::submodular::{AcquisitionFunction, GainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Gains within this distance count as equal for tie-breaking.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyMode {
    Naive,
    #[default]
    Lazy,
    Stochastic,
}

/// How partitioned selections are merged.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    /// Each partition selects a full budget; a final greedy pass over the
    /// union picks the global batch.
    #[default]
    ReGreedy,
    /// Each partition contributes an even share of the budget; cheaper, no
    /// final pass.
    Quota,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GreedyOptions {
    pub mode: GreedyMode,
    pub seed: u64,
    /// Stochastic-greedy accuracy parameter.
    pub epsilon: f64,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            mode: GreedyMode::Lazy,
            seed: 0,
            epsilon: 0.01,
        }
    }
}

/// Outcome of one budgeted maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected ids in pick order.
    pub chosen: Vec<PointId>,
    /// Realized marginal gain of each pick.
    pub gains: Vec<f64>,
    /// True when a non-positive best gain ended the run before the budget.
    pub stopped_early: bool,
    /// Final objective value of the chosen set.
    pub objective: f64,
}

struct HeapEntry {
    bound: f64,
    id: PointId,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on bound; smaller id floats up among exact ties
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn validate_candidates(f: &AcquisitionFunction, candidates: &[PointId]) -> Result<Vec<PointId>> {
    if candidates.is_empty() {
        return Err(Error::Argument("candidates must be nonempty".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Argument("duplicate candidate id".into()));
    }
    for id in &sorted {
        if !f.contains_candidate(*id) {
            return Err(Error::UnknownId(*id));
        }
    }
    Ok(sorted)
}

/// Picks the winner from scored candidates: maximum gain, ties within
/// [`TIE_TOLERANCE`] resolved to the smallest id.
fn pick_best(scored: &[(PointId, f64)]) -> Option<(PointId, f64)> {
    let gmax = scored
        .iter()
        .map(|(_, g)| *g)
        .fold(f64::NEG_INFINITY, f64::max);
    scored
        .iter()
        .filter(|(_, g)| *g >= gmax - TIE_TOLERANCE)
        .min_by_key(|(id, _)| *id)
        .copied()
}

/// Greedy maximization of `f` over `candidates` under a cardinality budget.
///
/// A budget larger than the candidate pool selects everything (not flagged
/// as early stopping). Deterministic for a fixed seed in every mode.
pub fn greedy(
    f: &AcquisitionFunction,
    candidates: &[PointId],
    budget: usize,
    opts: &GreedyOptions,
) -> Result<SelectionResult> {
    if budget == 0 {
        return Err(Error::Argument("budget must be >= 1".into()));
    }
    let sorted = validate_candidates(f, candidates)?;
    let mode = match opts.mode {
        GreedyMode::Lazy if !f.lazy_safe() => GreedyMode::Naive,
        m => m,
    };
    match mode {
        GreedyMode::Naive => greedy_naive(f, sorted, budget),
        GreedyMode::Lazy => greedy_lazy(f, sorted, budget),
        GreedyMode::Stochastic => greedy_stochastic(f, sorted, budget, opts),
    }
}

fn finish(
    f: &AcquisitionFunction,
    state: GainState,
    chosen: Vec<PointId>,
    gains: Vec<f64>,
    stopped_early: bool,
) -> SelectionResult {
    SelectionResult {
        objective: f.value(&state),
        chosen,
        gains,
        stopped_early,
    }
}

fn greedy_naive(
    f: &AcquisitionFunction,
    mut remaining: Vec<PointId>,
    budget: usize,
) -> Result<SelectionResult> {
    let mut state = f.new_state();
    let mut chosen = Vec::new();
    let mut gains = Vec::new();
    let stop_nonpositive = f.stops_on_nonpositive_gain();
    let mut stopped_early = false;
    while chosen.len() < budget && !remaining.is_empty() {
        let scored: Vec<(PointId, f64)> = remaining
            .par_iter()
            .map(|id| f.marginal_gain(&state, *id).map(|g| (*id, g)))
            .collect::<Result<_>>()?;
        let (best_id, best_gain) = pick_best(&scored).expect("nonempty candidates");
        if stop_nonpositive && best_gain <= 0.0 {
            stopped_early = true;
            break;
        }
        let g = f.commit(&mut state, best_id)?;
        chosen.push(best_id);
        gains.push(g);
        remaining.retain(|id| *id != best_id);
    }
    Ok(finish(f, state, chosen, gains, stopped_early))
}

fn greedy_lazy(
    f: &AcquisitionFunction,
    remaining: Vec<PointId>,
    budget: usize,
) -> Result<SelectionResult> {
    let mut state = f.new_state();
    let scored: Vec<(PointId, f64)> = remaining
        .par_iter()
        .map(|id| f.marginal_gain(&state, *id).map(|g| (*id, g)))
        .collect::<Result<_>>()?;
    let mut heap: BinaryHeap<HeapEntry> = scored
        .into_iter()
        .map(|(id, bound)| HeapEntry { bound, id })
        .collect();

    let mut chosen = Vec::new();
    let mut gains = Vec::new();
    let stop_nonpositive = f.stops_on_nonpositive_gain();
    let mut stopped_early = false;

    while chosen.len() < budget && !heap.is_empty() {
        // refresh every candidate whose stale bound could still beat or tie
        // the best fresh gain seen this step
        let mut refreshed: Vec<(PointId, f64)> = Vec::new();
        let mut best_fresh = f64::NEG_INFINITY;
        while let Some(top) = heap.peek() {
            if !refreshed.is_empty() && top.bound < best_fresh - TIE_TOLERANCE {
                break;
            }
            let entry = heap.pop().expect("peeked");
            let fresh = f.marginal_gain(&state, entry.id)?;
            best_fresh = best_fresh.max(fresh);
            refreshed.push((entry.id, fresh));
        }
        let (best_id, best_gain) = pick_best(&refreshed).expect("nonempty refresh set");
        if stop_nonpositive && best_gain <= 0.0 {
            // push everything back untouched; the run is over
            stopped_early = true;
            break;
        }
        for (id, bound) in refreshed {
            if id != best_id {
                heap.push(HeapEntry { bound, id });
            }
        }
        let g = f.commit(&mut state, best_id)?;
        chosen.push(best_id);
        gains.push(g);
    }
    Ok(finish(f, state, chosen, gains, stopped_early))
}

fn greedy_stochastic(
    f: &AcquisitionFunction,
    mut remaining: Vec<PointId>,
    budget: usize,
    opts: &GreedyOptions,
) -> Result<SelectionResult> {
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::Argument(format!(
            "stochastic epsilon must be in (0, 1), got {}",
            opts.epsilon
        )));
    }
    let n0 = remaining.len();
    let b = budget.min(n0);
    let sample_size = ((n0 as f64 / b as f64) * (1.0 / opts.epsilon).ln()).ceil() as usize;
    let sample_size = sample_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut state = f.new_state();
    let mut chosen = Vec::new();
    let mut gains = Vec::new();
    let stop_nonpositive = f.stops_on_nonpositive_gain();
    let mut stopped_early = false;
    while chosen.len() < budget && !remaining.is_empty() {
        let take = sample_size.min(remaining.len());
        let mut picked_idx = rand::seq::index::sample(&mut rng, remaining.len(), take).into_vec();
        picked_idx.sort_unstable();
        let scored: Vec<(PointId, f64)> = picked_idx
            .iter()
            .map(|&i| {
                let id = remaining[i];
                f.marginal_gain(&state, id).map(|g| (id, g))
            })
            .collect::<Result<_>>()?;
        let (best_id, best_gain) = pick_best(&scored).expect("nonempty sample");
        if stop_nonpositive && best_gain <= 0.0 {
            stopped_early = true;
            break;
        }
        let g = f.commit(&mut state, best_id)?;
        chosen.push(best_id);
        gains.push(g);
        remaining.retain(|id| *id != best_id);
    }
    Ok(finish(f, state, chosen, gains, stopped_early))
}

/// Per-partition accounting for [`partitioned_greedy`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionStats {
    pub size: usize,
    pub selected: usize,
    /// True when the partition held fewer candidates than its budget share.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct PartitionedSelection {
    pub selection: SelectionResult,
    pub partitions: Vec<PartitionStats>,
}

/// Partitioned greedy: the candidate set is split into `parts` seeded
/// partitions, each maximized locally by `build`-ing a function over that
/// partition as its ground set, then merged per the policy.
///
/// With `parts == 1` this is exactly [`greedy`]. The `build` callback
/// receives the ground id list a function should cover (a partition, or the
/// full candidate list for the final re-greedy pass).
pub fn partitioned_greedy<F>(
    build: F,
    candidates: &[PointId],
    budget: usize,
    parts: usize,
    merge: MergePolicy,
    opts: &GreedyOptions,
) -> Result<PartitionedSelection>
where
    F: Fn(&[PointId]) -> Result<AcquisitionFunction> + Sync,
{
    if budget == 0 {
        return Err(Error::Argument("budget must be >= 1".into()));
    }
    if parts == 1 {
        let f = build(candidates)?;
        let selection = greedy(&f, candidates, budget, opts)?;
        let stats = PartitionStats {
            size: candidates.len(),
            selected: selection.chosen.len(),
            truncated: candidates.len() < budget,
        };
        return Ok(PartitionedSelection {
            selection,
            partitions: vec![stats],
        });
    }

    let partitions = partition_ground_set(candidates, parts, opts.seed)?;
    let local: Vec<(Vec<PointId>, SelectionResult)> = partitions
        .par_iter()
        .map(|part| {
            let mut part_sorted = part.clone();
            part_sorted.sort_unstable();
            let f = build(&part_sorted)?;
            let r = greedy(&f, &part_sorted, budget.min(part_sorted.len()), opts)?;
            Ok((part_sorted, r))
        })
        .collect::<Result<_>>()?;

    let mut stats = Vec::with_capacity(local.len());
    for (part, r) in &local {
        stats.push(PartitionStats {
            size: part.len(),
            selected: r.chosen.len(),
            truncated: part.len() < budget,
        });
    }

    let selection = match merge {
        MergePolicy::ReGreedy => {
            let mut union: Vec<PointId> = local
                .iter()
                .flat_map(|(_, r)| r.chosen.iter().copied())
                .collect();
            union.sort_unstable();
            let f = build(candidates)?;
            greedy(&f, &union, budget, opts)?
        }
        MergePolicy::Quota => {
            // spread the budget as evenly as the partition sizes allow
            let mut chosen = Vec::new();
            let mut gains = Vec::new();
            let base = budget / local.len();
            let extra = budget % local.len();
            for (k, (_, r)) in local.iter().enumerate() {
                let quota = (base + usize::from(k < extra)).min(r.chosen.len());
                chosen.extend_from_slice(&r.chosen[..quota]);
                gains.extend_from_slice(&r.gains[..quota]);
            }
            let objective = gains.iter().sum();
            SelectionResult {
                stopped_early: chosen.len() < budget.min(candidates.len()),
                chosen,
                gains,
                objective,
            }
        }
    };

    Ok(PartitionedSelection {
        selection,
        partitions: stats,
    })
}
