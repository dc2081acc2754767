//! Exact solvers for single-constraint sub-problems.
//!
//! Both solvers maximize a real-valued objective: the knapsack DP runs over
//! integer capacities in `O(n W)`, the `Regular` DP over the layered
//! (period, state) graph in `O(n m Q)`.

use thiserror::Error;

use crate::instances::{Automaton, PartialAssignment};

/// The fixed variables admit no solution of the sub-problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sub-problem is infeasible under the fixed assignment")]
pub struct Infeasible;

/// One-dimensional 0/1 knapsack with real item values.
#[derive(Debug, Clone, Copy)]
pub struct KnapsackSubproblem<'a> {
    pub weights: &'a [u64],
    pub capacity: u64,
    pub values: &'a [f64],
    /// Fixed 0/1 values; free items are `None`.
    pub fixed: &'a PartialAssignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    pub value: f64,
    /// 0/1 per item.
    pub selection: Vec<u8>,
}

/// Solves a knapsack sub-problem exactly.
///
/// Fixed-out items are dropped, fixed-in items consume capacity up front, and
/// the free items go through a DP over capacity. Among optima, an item is
/// left out unless taking it strictly improves the value.
pub fn solve_knapsack(sub: &KnapsackSubproblem<'_>) -> Result<KnapsackSolution, Infeasible> {
    let n = sub.weights.len();
    debug_assert_eq!(sub.values.len(), n);
    debug_assert_eq!(sub.fixed.len(), n);

    let mut selection = vec![0u8; n];
    let mut value = 0.0;
    let mut used: u64 = 0;
    for j in 0..n {
        if sub.fixed.get(j) == Some(1) {
            selection[j] = 1;
            value += sub.values[j];
            used += sub.weights[j];
        }
    }
    let residual = sub.capacity.checked_sub(used).ok_or(Infeasible)?;

    // Free items that could ever be chosen: positive value and fitting.
    let candidates: Vec<usize> = (0..n)
        .filter(|&j| sub.fixed.is_free(j) && sub.values[j] > 0.0 && sub.weights[j] <= residual)
        .collect();
    if candidates.is_empty() {
        return Ok(KnapsackSolution { value, selection });
    }
    let total: u64 = candidates.iter().map(|&j| sub.weights[j]).sum();
    let cap = residual.min(total) as usize;

    let width = cap + 1;
    let mut best = vec![0.0f64; width];
    let mut take = vec![false; candidates.len() * width];
    for (row, &j) in candidates.iter().enumerate() {
        let w = sub.weights[j] as usize;
        let v = sub.values[j];
        let flags = &mut take[row * width..(row + 1) * width];
        for c in (w..width).rev() {
            let with = best[c - w] + v;
            if with > best[c] {
                best[c] = with;
                flags[c] = true;
            }
        }
    }

    let mut c = cap;
    let mut free_value = 0.0;
    for (row, &j) in candidates.iter().enumerate().rev() {
        if take[row * width + c] {
            selection[j] = 1;
            free_value += sub.values[j];
            c -= sub.weights[j] as usize;
        }
    }
    debug_assert!((free_value - best[cap]).abs() <= 1e-9 * (1.0 + best[cap].abs()));
    Ok(KnapsackSolution {
        value: value + best[cap],
        selection,
    })
}

/// Longest accepted path through a `Regular` automaton.
#[derive(Debug, Clone, Copy)]
pub struct RegularSubproblem<'a> {
    pub automaton: &'a Automaton,
    /// `arc_values[j * alphabet + a]`: value of symbol `a` at period `j`.
    pub arc_values: &'a [f64],
    pub periods: usize,
    /// Must fix a contiguous prefix.
    pub fixed: &'a PartialAssignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularSolution {
    pub value: f64,
    /// Activity per period.
    pub sequence: Vec<usize>,
}

/// Solves a `Regular` sub-problem exactly.
///
/// Backward DP over `(period, state)`; the optimal sequence is rebuilt
/// forward, taking the lowest symbol among equal-valued choices.
pub fn solve_regular(sub: &RegularSubproblem<'_>) -> Result<RegularSolution, Infeasible> {
    let aut = sub.automaton;
    let m = aut.alphabet();
    let q_count = aut.states();
    let n = sub.periods;
    debug_assert_eq!(sub.arc_values.len(), n * m);
    debug_assert!(sub.fixed.is_prefix());

    let prefix = sub.fixed.prefix_len();
    let mut state = aut.initial();
    let mut sequence = Vec::with_capacity(n);
    let mut value = 0.0;
    for j in 0..prefix {
        let a = sub.fixed.get(j).expect("prefix is fixed");
        state = aut.next(state, a).ok_or(Infeasible)?;
        value += sub.arc_values[j * m + a];
        sequence.push(a);
    }

    // best[j][q]: best value of periods j..n starting in q, -inf if no
    // accepting completion exists.
    let layers = n - prefix;
    let mut best = vec![f64::NEG_INFINITY; (layers + 1) * q_count];
    for q in 0..q_count {
        if aut.is_final(q) {
            best[layers * q_count + q] = 0.0;
        }
    }
    for layer in (0..layers).rev() {
        let j = prefix + layer;
        let (head, tail) = best.split_at_mut((layer + 1) * q_count);
        let here = &mut head[layer * q_count..];
        let next = &tail[..q_count];
        for q in 0..q_count {
            let mut b = f64::NEG_INFINITY;
            for a in 0..m {
                if let Some(t) = aut.next(q, a) {
                    if next[t] > f64::NEG_INFINITY {
                        let cand = sub.arc_values[j * m + a] + next[t];
                        if cand > b {
                            b = cand;
                        }
                    }
                }
            }
            here[q] = b;
        }
    }

    let total = best[state];
    if total == f64::NEG_INFINITY {
        return Err(Infeasible);
    }
    for layer in 0..layers {
        let j = prefix + layer;
        let target = best[layer * q_count + state];
        let next = &best[(layer + 1) * q_count..(layer + 2) * q_count];
        let (a, t) = (0..m)
            .filter_map(|a| aut.next(state, a).map(|t| (a, t)))
            .find(|&(a, t)| {
                next[t] > f64::NEG_INFINITY && sub.arc_values[j * m + a] + next[t] == target
            })
            .expect("DP value is attained by some arc");
        sequence.push(a);
        state = t;
    }
    Ok(RegularSolution {
        value: value + total,
        sequence,
    })
}
