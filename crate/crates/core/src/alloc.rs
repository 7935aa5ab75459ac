//! Connectivity-free optimum: equidistant relays within a flow and the greedy
//! distribution of relays across flows.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::model::{FlowId, Params};

/// Limits for [`brute_force_allocate`].
pub const ORACLE_MAX_TOTAL: usize = 12;
pub const ORACLE_MAX_FLOWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub counts: BTreeMap<FlowId, usize>,
    pub total: usize,
}

impl Allocation {
    pub fn new(counts: BTreeMap<FlowId, usize>) -> Self {
        let total = counts.values().sum();
        Allocation { counts, total }
    }

    /// Sum of ideal flow costs, accumulated in flow-id order.
    pub fn cost(&self, lengths: &BTreeMap<FlowId, f64>, p: &Params) -> f64 {
        self.counts
            .iter()
            .map(|(k, &m)| ideal_flow_cost(lengths[k], m, p))
            .sum()
    }
}

/// `m` points splitting the segment `src`-`dst` into `m + 1` equal hops,
/// ordered from `src`.
pub fn equidistant_positions(src: Vec2, dst: Vec2, m: usize) -> Result<Vec<Vec2>> {
    if src == dst {
        return Err(Error::DegenerateFlow);
    }
    let step = (dst - src) * (1.0 / (m + 1) as f64);
    Ok((1..=m).map(|k| src + step * k as f64).collect())
}

/// Cost of a flow of length `d` served by `m` equally spaced relays.
///
/// Unlike [`link_weight`], the hop weight here is not saturated: the cap
/// would flatten the curve for very long hops and break its convexity in
/// `m`. Hops beyond roughly `b + 709 / a` overflow to infinity.
pub fn ideal_flow_cost(d: f64, m: usize, p: &Params) -> f64 {
    let hops = (m + 1) as f64;
    hops * (1.0 + (p.a * (d / hops - p.b)).exp())
}

fn check_lengths(lengths: &BTreeMap<FlowId, f64>) -> Result<()> {
    if lengths.is_empty() {
        return Err(Error::InvalidAllocation("at least one flow is required"));
    }
    if lengths.values().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidAllocation("flow lengths must be positive"));
    }
    Ok(())
}

/// Deals `total` nodes to flows in id order, one at a time.
pub fn round_robin(lengths: &BTreeMap<FlowId, f64>, total: usize) -> Allocation {
    let ids: Vec<FlowId> = lengths.keys().copied().collect();
    let mut counts: BTreeMap<FlowId, usize> = ids.iter().map(|&k| (k, 0)).collect();
    for i in 0..total {
        *counts.get_mut(&ids[i % ids.len()]).unwrap() += 1;
    }
    Allocation { counts, total }
}

/// Minimum-cost allocation by greedy single-node moves, starting from a
/// round-robin deal.
pub fn greedy_allocate(
    lengths: &BTreeMap<FlowId, f64>,
    total: usize,
    p: &Params,
) -> Result<Allocation> {
    check_lengths(lengths)?;
    let start = round_robin(lengths, total);
    Ok(greedy_allocate_from(lengths, start, p)?.0)
}

/// Runs the greedy improvement from `start` and returns the final allocation
/// with the number of moves taken.
///
/// Each move takes one node from the flow whose removal raises its cost least
/// and gives it to the flow whose cost drops most, provided the drop strictly
/// exceeds the rise. Ties go to the lowest flow id.
pub fn greedy_allocate_from(
    lengths: &BTreeMap<FlowId, f64>,
    start: Allocation,
    p: &Params,
) -> Result<(Allocation, usize)> {
    check_lengths(lengths)?;
    if start.counts.keys().ne(lengths.keys()) {
        return Err(Error::InvalidAllocation(
            "starting allocation must cover exactly the given flows",
        ));
    }
    let mut counts = start.counts;
    let total = counts.values().sum::<usize>();
    let cost = |k: &FlowId, m: usize| ideal_flow_cost(lengths[k], m, p);
    // Every move strictly lowers a convex objective over a finite set.
    let limit = (total + 1) * lengths.len() * (total + 1);
    let mut moves = 0;
    loop {
        let mut src: Option<(FlowId, f64)> = None;
        let mut dst: Option<(FlowId, f64)> = None;
        for (k, &m) in &counts {
            if m > 0 {
                let rise = cost(k, m - 1) - cost(k, m);
                if src.is_none_or(|(_, best)| rise < best) {
                    src = Some((*k, rise));
                }
            }
            let drop = cost(k, m) - cost(k, m + 1);
            if dst.is_none_or(|(_, best)| drop > best) {
                dst = Some((*k, drop));
            }
        }
        let (Some((from, rise)), Some((to, drop))) = (src, dst) else {
            break;
        };
        if from == to || drop <= rise {
            break;
        }
        *counts.get_mut(&from).unwrap() -= 1;
        *counts.get_mut(&to).unwrap() += 1;
        moves += 1;
        assert!(moves <= limit, "greedy allocation failed to terminate");
    }
    Ok((Allocation { counts, total }, moves))
}

/// Exhaustive minimum over all compositions of `total` into the given flows.
/// Ties keep the first composition in lexicographic order of counts.
pub fn brute_force_allocate(
    lengths: &BTreeMap<FlowId, f64>,
    total: usize,
    p: &Params,
) -> Result<Allocation> {
    check_lengths(lengths)?;
    if total > ORACLE_MAX_TOTAL || lengths.len() > ORACLE_MAX_FLOWS {
        return Err(Error::Capacity {
            flows: lengths.len(),
            total,
            max_flows: ORACLE_MAX_FLOWS,
            max_total: ORACLE_MAX_TOTAL,
        });
    }
    let ids: Vec<FlowId> = lengths.keys().copied().collect();
    let table: Vec<Vec<f64>> = ids
        .iter()
        .map(|k| (0..=total).map(|m| ideal_flow_cost(lengths[k], m, p)).collect())
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = vec![0; ids.len()];
    enumerate(&table, total, 0, &mut current, &mut best);
    let (_, counts) = best.expect("at least one composition exists");
    Ok(Allocation {
        counts: ids.into_iter().zip(counts).collect(),
        total,
    })
}

fn enumerate(
    table: &[Vec<f64>],
    remaining: usize,
    k: usize,
    current: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if k + 1 == table.len() {
        current[k] = remaining;
        let c: f64 = current.iter().enumerate().map(|(j, &m)| table[j][m]).sum();
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            *best = Some((c, current.clone()));
        }
        return;
    }
    for m in 0..=remaining {
        current[k] = m;
        enumerate(table, remaining - m, k + 1, current, best);
    }
}
