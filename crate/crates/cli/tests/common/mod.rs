//! Exhaustive-enumeration oracles shared by the integration tests.
#![allow(dead_code)]

use ldbound::instances::{Automaton, Instance, MkpInstance, PartialAssignment};

/// Every completion of `partial` over `0..domain`, in lexicographic order.
pub fn completions(partial: &PartialAssignment, domain: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for j in 0..partial.len() {
        let choices: Vec<usize> = match partial.get(j) {
            Some(v) => vec![v],
            None => (0..domain).collect(),
        };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Best objective over feasible completions of `partial`.
pub fn optimum(instance: &Instance, partial: &PartialAssignment) -> Option<i64> {
    completions(partial, instance.domain_size())
        .iter()
        .filter_map(|x| instance.evaluate(x))
        .max()
}

/// Best value of a 0/1 knapsack by enumeration; `None` if no selection fits.
pub fn knapsack(weights: &[u64], capacity: u64, values: &[f64], fixed: &PartialAssignment) -> Option<f64> {
    completions(fixed, 2)
        .iter()
        .filter(|x| x.iter().zip(weights).map(|(&s, &w)| s as u64 * w).sum::<u64>() <= capacity)
        .map(|x| x.iter().zip(values).map(|(&s, &v)| s as f64 * v).sum::<f64>())
        .reduce(f64::max)
}

/// Best accepted word by enumeration; arc values indexed `j * alphabet + a`.
pub fn regular(automaton: &Automaton, periods: usize, arc_values: &[f64], fixed: &PartialAssignment) -> Option<f64> {
    let m = automaton.alphabet();
    debug_assert_eq!(fixed.len(), periods);
    completions(fixed, m)
        .iter()
        .filter(|w| automaton.accepts(w))
        .map(|w| w.iter().enumerate().map(|(j, &a)| arc_values[j * m + a]).sum::<f64>())
        .reduce(f64::max)
}

/// Best objective of an MKP restricted to its first constraint.
pub fn first_constraint_optimum(instance: &Instance, partial: &PartialAssignment) -> Option<f64> {
    match instance {
        Instance::Mkp(m) => {
            let values: Vec<f64> = m.profits().iter().map(|&v| v as f64).collect();
            knapsack(&m.weights()[0], m.capacities()[0], &values, partial)
        }
        Instance::Ssp(s) => {
            let n = s.periods();
            let w = s.activities();
            let arcs: Vec<f64> = (0..n * w).map(|k| s.profit(k % w, k / w) as f64).collect();
            regular(&s.automata()[0], n, &arcs, partial)
        }
    }
}

pub fn tiny_mkp() -> MkpInstance {
    MkpInstance::new(vec![3, 4], vec![vec![2, 3], vec![3, 3]], vec![5, 3]).unwrap()
}

