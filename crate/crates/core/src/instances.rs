//! Problem families, partial assignments, generators and on-disk formats.
//!
//! Two families are supported: the multi-dimensional knapsack (MKP) and a
//! shift-scheduling problem (SSP) whose work rules are one or more `Regular`
//! constraints over a shared sequence of activities.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no feasible instance after {attempts} attempts")]
    GenerationFailed { attempts: usize },
}

fn mismatch(field: impl Into<String>, expected: usize, found: usize) -> InstanceError {
    InstanceError::DimensionMismatch {
        field: field.into(),
        expected,
        found,
    }
}

/// Problem family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mkp,
    Ssp,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Mkp => "mkp",
            Family::Ssp => "ssp",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mkp" => Ok(Family::Mkp),
            "ssp" => Ok(Family::Ssp),
            other => Err(format!("unknown family `{other}` (expected mkp or ssp)")),
        }
    }
}

/// Multi-dimensional 0/1 knapsack: maximize `profits · x` subject to
/// `weights[k] · x <= capacities[k]` for every dimension `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MkpInstance {
    n: usize,
    d: usize,
    profits: Vec<u64>,
    weights: Vec<Vec<u64>>,
    capacities: Vec<u64>,
}

impl MkpInstance {
    pub fn new(
        profits: Vec<u64>,
        weights: Vec<Vec<u64>>,
        capacities: Vec<u64>,
    ) -> Result<Self, InstanceError> {
        let n = profits.len();
        let d = capacities.len();
        if n == 0 || d == 0 {
            return Err(InstanceError::Invalid(
                "an MKP needs at least one item and one dimension".into(),
            ));
        }
        if weights.len() != d {
            return Err(mismatch("weights", d, weights.len()));
        }
        for (k, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(mismatch(format!("weights[{k}]"), n, row.len()));
            }
        }
        Ok(Self {
            n,
            d,
            profits,
            weights,
            capacities,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn profits(&self) -> &[u64] {
        &self.profits
    }

    /// `weights()[k][j]` is the weight of item `j` in dimension `k`.
    pub fn weights(&self) -> &[Vec<u64>] {
        &self.weights
    }

    pub fn capacities(&self) -> &[u64] {
        &self.capacities
    }

    pub fn max_profit(&self) -> u64 {
        self.profits.iter().copied().max().unwrap_or(0)
    }

    pub fn max_weight(&self) -> u64 {
        self.weights.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Profit of a 0/1 selection, or `None` if it violates a capacity.
    pub fn evaluate(&self, selection: &[usize]) -> Option<i64> {
        for k in 0..self.d {
            let load: u64 = (0..self.n)
                .filter(|&j| selection[j] == 1)
                .map(|j| self.weights[k][j])
                .sum();
            if load > self.capacities[k] {
                return None;
            }
        }
        Some(
            (0..self.n)
                .filter(|&j| selection[j] == 1)
                .map(|j| self.profits[j] as i64)
                .sum(),
        )
    }

    /// Residual capacity of each dimension after the items fixed to 1 in
    /// `partial`; `None` when some dimension is already overloaded.
    pub fn residual_capacities(&self, partial: &PartialAssignment) -> Option<Vec<u64>> {
        (0..self.d)
            .map(|k| {
                let used: u64 = partial
                    .iter()
                    .filter(|&(_, v)| v == Some(1))
                    .map(|(j, _)| self.weights[k][j])
                    .sum();
                self.capacities[k].checked_sub(used)
            })
            .collect()
    }
}

/// Deterministic finite automaton over the alphabet `0..alphabet`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Automaton {
    states: usize,
    alphabet: usize,
    /// `delta[q * alphabet + a]`.
    delta: Vec<Option<usize>>,
    initial: usize,
    finals: Vec<bool>,
}

impl Automaton {
    /// Builds an automaton from `(state, symbol, target)` triples.
    pub fn new(
        states: usize,
        alphabet: usize,
        transitions: &[(usize, usize, usize)],
        initial: usize,
        finals: &[usize],
    ) -> Result<Self, InstanceError> {
        if states == 0 || alphabet == 0 {
            return Err(InstanceError::Invalid(
                "automaton needs at least one state and one symbol".into(),
            ));
        }
        if initial >= states {
            return Err(InstanceError::Invalid(format!(
                "initial state {initial} out of range (states = {states})"
            )));
        }
        let mut final_mask = vec![false; states];
        for &f in finals {
            if f >= states {
                return Err(InstanceError::Invalid(format!(
                    "final state {f} out of range (states = {states})"
                )));
            }
            final_mask[f] = true;
        }
        let mut delta = vec![None; states * alphabet];
        for &(q, a, t) in transitions {
            if q >= states || t >= states {
                return Err(InstanceError::Invalid(format!(
                    "transition ({q}, {a}, {t}) references a state outside 0..{states}"
                )));
            }
            if a >= alphabet {
                return Err(InstanceError::Invalid(format!(
                    "transition ({q}, {a}, {t}) uses a symbol outside 0..{alphabet}"
                )));
            }
            let slot = &mut delta[q * alphabet + a];
            if slot.is_some_and(|old| old != t) {
                return Err(InstanceError::Invalid(format!(
                    "nondeterministic transition from state {q} on symbol {a}"
                )));
            }
            *slot = Some(t);
        }
        Ok(Self {
            states,
            alphabet,
            delta,
            initial,
            finals: final_mask,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    #[inline]
    pub fn next(&self, state: usize, symbol: usize) -> Option<usize> {
        self.delta[state * self.alphabet + symbol]
    }

    #[inline]
    pub fn is_final(&self, state: usize) -> bool {
        self.finals[state]
    }

    pub fn final_states(&self) -> Vec<usize> {
        (0..self.states).filter(|&q| self.finals[q]).collect()
    }

    /// Transitions as sorted `(state, symbol, target)` triples.
    pub fn transitions(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for q in 0..self.states {
            for a in 0..self.alphabet {
                if let Some(t) = self.next(q, a) {
                    out.push((q, a, t));
                }
            }
        }
        out
    }

    /// State reached from the initial state by reading `word`.
    pub fn run(&self, word: &[usize]) -> Option<usize> {
        word.iter()
            .try_fold(self.initial, |q, &a| self.next(q, a))
    }

    pub fn accepts(&self, word: &[usize]) -> bool {
        self.run(word).is_some_and(|q| self.is_final(q))
    }
}

/// Forward/backward reachability over the layered graph of an automaton
/// restricted to per-period domains.
///
/// `forward[j][q]`: `q` is reachable from the initial state after `j`
/// symbols; `backward[j][q]`: from `q` at period `j` some accepted completion
/// exists. An arc `(q, a, t)` at period `j` is supported when it lies on an
/// accepted path, i.e. `forward[j][q] && backward[j + 1][t]`.
#[derive(Debug, Clone)]
pub struct LayeredSupport {
    states: usize,
    forward: Vec<bool>,
    backward: Vec<bool>,
}

impl LayeredSupport {
    /// `domains[j][a]` allows symbol `a` at period `j`.
    pub fn new(automaton: &Automaton, domains: &[Vec<bool>]) -> Self {
        let n = domains.len();
        let q_count = automaton.states();
        let m = automaton.alphabet();
        let mut forward = vec![false; (n + 1) * q_count];
        forward[automaton.initial()] = true;
        for j in 0..n {
            for q in 0..q_count {
                if !forward[j * q_count + q] {
                    continue;
                }
                for a in (0..m).filter(|&a| domains[j][a]) {
                    if let Some(t) = automaton.next(q, a) {
                        forward[(j + 1) * q_count + t] = true;
                    }
                }
            }
        }
        let mut backward = vec![false; (n + 1) * q_count];
        for q in 0..q_count {
            backward[n * q_count + q] = forward[n * q_count + q] && automaton.is_final(q);
        }
        for j in (0..n).rev() {
            for q in 0..q_count {
                if !forward[j * q_count + q] {
                    continue;
                }
                backward[j * q_count + q] = (0..m).filter(|&a| domains[j][a]).any(|a| {
                    automaton
                        .next(q, a)
                        .is_some_and(|t| backward[(j + 1) * q_count + t])
                });
            }
        }
        Self {
            states: q_count,
            forward,
            backward,
        }
    }

    /// Whether any accepted word fits the domains.
    pub fn is_feasible(&self, automaton: &Automaton) -> bool {
        self.backward[automaton.initial()]
    }

    /// Whether `q` lies on an accepted path at period `j`.
    pub fn supports_state(&self, period: usize, state: usize) -> bool {
        self.backward[period * self.states + state]
    }

    /// Whether arc `(state, symbol)` at `period` lies on an accepted path
    /// (the symbol must also be in the domain used to build `self`).
    pub fn supports_arc(&self, automaton: &Automaton, period: usize, state: usize, symbol: usize) -> bool {
        self.forward[period * self.states + state]
            && automaton
                .next(state, symbol)
                .is_some_and(|t| self.backward[(period + 1) * self.states + t])
    }
}

/// Single-employee shift scheduling: pick one activity per period so that the
/// sequence is accepted by every automaton, maximizing the summed profit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SspInstance {
    periods: usize,
    activities: usize,
    automata: Vec<Automaton>,
    /// `profits[a][j]`: profit of activity `a` at period `j`.
    profits: Vec<Vec<u64>>,
}

impl SspInstance {
    pub fn new(
        periods: usize,
        activities: usize,
        automata: Vec<Automaton>,
        profits: Vec<Vec<u64>>,
    ) -> Result<Self, InstanceError> {
        if periods == 0 || activities == 0 {
            return Err(InstanceError::Invalid(
                "an SSP needs at least one period and one activity".into(),
            ));
        }
        if automata.is_empty() {
            return Err(InstanceError::Invalid("an SSP needs at least one automaton".into()));
        }
        for (i, automaton) in automata.iter().enumerate() {
            if automaton.alphabet() != activities {
                return Err(mismatch(
                    format!("automata[{i}].alphabet"),
                    activities,
                    automaton.alphabet(),
                ));
            }
        }
        if profits.len() != activities {
            return Err(mismatch("profits", activities, profits.len()));
        }
        for (a, row) in profits.iter().enumerate() {
            if row.len() != periods {
                return Err(mismatch(format!("profits[{a}]"), periods, row.len()));
            }
        }
        Ok(Self {
            periods,
            activities,
            automata,
            profits,
        })
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn activities(&self) -> usize {
        self.activities
    }

    pub fn automata(&self) -> &[Automaton] {
        &self.automata
    }

    /// `profit(a, j)`: profit of activity `a` at period `j`.
    #[inline]
    pub fn profit(&self, activity: usize, period: usize) -> u64 {
        self.profits[activity][period]
    }

    pub fn profits(&self) -> &[Vec<u64>] {
        &self.profits
    }

    pub fn max_profit(&self) -> u64 {
        self.profits.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Total profit of a full sequence, or `None` if some automaton rejects it.
    pub fn evaluate(&self, sequence: &[usize]) -> Option<i64> {
        if sequence.len() != self.periods || sequence.iter().any(|&a| a >= self.activities) {
            return None;
        }
        if !self.automata.iter().all(|aut| aut.accepts(sequence)) {
            return None;
        }
        Some(
            sequence
                .iter()
                .enumerate()
                .map(|(j, &a)| self.profits[a][j] as i64)
                .sum(),
        )
    }

    /// Whether the fixed prefix of `partial` extends to a sequence accepted by
    /// all automata simultaneously (layered reachability over the product).
    pub fn has_feasible_completion(&self, partial: &PartialAssignment) -> bool {
        let prefix = partial.prefix_len();
        let word: Vec<usize> = (0..prefix).filter_map(|j| partial.get(j)).collect();
        let start: Option<Vec<usize>> = self.automata.iter().map(|aut| aut.run(&word)).collect();
        let Some(start) = start else {
            return false;
        };
        let mut layer: BTreeSet<Vec<usize>> = BTreeSet::from([start]);
        for _ in prefix..self.periods {
            let mut next = BTreeSet::new();
            for tuple in &layer {
                for a in 0..self.activities {
                    let stepped: Option<Vec<usize>> = tuple
                        .iter()
                        .zip(&self.automata)
                        .map(|(&q, aut)| aut.next(q, a))
                        .collect();
                    if let Some(t) = stepped {
                        next.insert(t);
                    }
                }
            }
            if next.is_empty() {
                return false;
            }
            layer = next;
        }
        layer
            .iter()
            .any(|t| t.iter().zip(&self.automata).all(|(&q, aut)| aut.is_final(q)))
    }
}

/// Either problem family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub enum Instance {
    Mkp(MkpInstance),
    Ssp(SspInstance),
}

impl Instance {
    pub fn family(&self) -> Family {
        match self {
            Instance::Mkp(_) => Family::Mkp,
            Instance::Ssp(_) => Family::Ssp,
        }
    }

    /// Number of decision variables (items or periods).
    pub fn variable_count(&self) -> usize {
        match self {
            Instance::Mkp(m) => m.n(),
            Instance::Ssp(s) => s.periods(),
        }
    }

    /// Number of constraints, hence of Lagrangian sub-problems.
    pub fn constraint_count(&self) -> usize {
        match self {
            Instance::Mkp(m) => m.d(),
            Instance::Ssp(s) => s.automata().len(),
        }
    }

    /// Domain size of every variable.
    pub fn domain_size(&self) -> usize {
        match self {
            Instance::Mkp(_) => 2,
            Instance::Ssp(s) => s.activities(),
        }
    }

    /// Objective of a full assignment, `None` when infeasible.
    pub fn evaluate(&self, assignment: &[usize]) -> Option<i64> {
        match self {
            Instance::Mkp(m) => {
                if assignment.len() != m.n() || assignment.iter().any(|&v| v > 1) {
                    return None;
                }
                m.evaluate(assignment)
            }
            Instance::Ssp(s) => s.evaluate(assignment),
        }
    }

    /// Checks that `partial` has the right length, values inside the domains
    /// and, for SSP, a contiguous fixed prefix.
    pub fn check_partial(&self, partial: &PartialAssignment) -> Result<(), InstanceError> {
        if partial.len() != self.variable_count() {
            return Err(mismatch("partial", self.variable_count(), partial.len()));
        }
        let dom = self.domain_size();
        if let Some((j, v)) = partial
            .iter()
            .find_map(|(j, v)| v.filter(|&v| v >= dom).map(|v| (j, v)))
        {
            return Err(InstanceError::Invalid(format!(
                "value {v} for variable {j} is outside its domain 0..{dom}"
            )));
        }
        if self.family() == Family::Ssp && !partial.is_prefix() {
            return Err(InstanceError::Invalid(
                "SSP partial assignments must fix a contiguous prefix".into(),
            ));
        }
        Ok(())
    }
}

impl From<MkpInstance> for Instance {
    fn from(m: MkpInstance) -> Self {
        Instance::Mkp(m)
    }
}

impl From<SspInstance> for Instance {
    fn from(s: SspInstance) -> Self {
        Instance::Ssp(s)
    }
}

/// Values fixed so far; `None` marks a free variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartialAssignment {
    values: Vec<Option<usize>>,
}

impl PartialAssignment {
    pub fn empty(len: usize) -> Self {
        Self {
            values: vec![None; len],
        }
    }

    pub fn from_values(values: Vec<Option<usize>>) -> Self {
        Self { values }
    }

    /// Partial that fixes `prefix` at the first periods.
    pub fn from_prefix(len: usize, prefix: &[usize]) -> Self {
        let mut p = Self::empty(len);
        for (j, &v) in prefix.iter().enumerate() {
            p.values[j] = Some(v);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<usize> {
        self.values[i]
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.values[i].is_none()
    }

    pub fn set(&mut self, i: usize, value: Option<usize>) {
        self.values[i] = value;
    }

    pub fn with(&self, i: usize, value: usize) -> Self {
        let mut p = self.clone();
        p.values[i] = Some(value);
        p
    }

    /// Number of fixed variables.
    pub fn depth(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn values(&self) -> &[Option<usize>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        self.values.iter().copied().enumerate()
    }

    pub fn free_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.iter().filter(|(_, v)| v.is_none()).map(|(i, _)| i)
    }

    /// Length of the leading run of fixed variables.
    pub fn prefix_len(&self) -> usize {
        self.values.iter().take_while(|v| v.is_some()).count()
    }

    /// True when the fixed variables form a contiguous prefix.
    pub fn is_prefix(&self) -> bool {
        self.prefix_len() == self.depth()
    }

    /// The full assignment, if every variable is fixed.
    pub fn complete(&self) -> Option<Vec<usize>> {
        self.values.iter().copied().collect()
    }
}

// ---------------------------------------------------------------------------
// Generators

/// Parameters of the uncorrelated uniform MKP generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MkpParams {
    pub n: usize,
    pub d: usize,
    /// Capacity as a fraction of the total weight of each dimension.
    pub tightness: f64,
}

impl Default for MkpParams {
    fn default() -> Self {
        Self {
            n: 30,
            d: 5,
            tightness: 0.5,
        }
    }
}

pub const MKP_MAX_PROFIT: u64 = 500;
pub const MKP_MAX_WEIGHT: u64 = 100;
pub const SSP_MAX_PROFIT: u64 = 100;

/// Uniform MKP: profits in `0..=500`, weights in `0..=100`, and capacity
/// `round(tightness * total weight)` per dimension.
///
/// Draw order: all profits, then the weight rows dimension by dimension.
pub fn generate_mkp(params: MkpParams, seed: u64) -> Result<MkpInstance, InstanceError> {
    let MkpParams { n, d, tightness } = params;
    if n == 0 || d == 0 {
        return Err(InstanceError::InvalidParameter("n and d must be at least 1".into()));
    }
    if !(tightness > 0.0 && tightness <= 1.0) {
        return Err(InstanceError::InvalidParameter(format!(
            "tightness {tightness} outside (0, 1]"
        )));
    }
    let mut rng = Rng::new(seed);
    let profits: Vec<u64> = (0..n).map(|_| rng.inclusive(0, MKP_MAX_PROFIT)).collect();
    let weights: Vec<Vec<u64>> = (0..d)
        .map(|_| (0..n).map(|_| rng.inclusive(0, MKP_MAX_WEIGHT)).collect())
        .collect();
    let capacities = weights
        .iter()
        .map(|row| (tightness * row.iter().sum::<u64>() as f64).round() as u64)
        .collect();
    MkpInstance::new(profits, weights, capacities)
}

/// Parameters of the random-automata SSP generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SspParams {
    pub periods: usize,
    pub activities: usize,
    pub states: usize,
    /// Probability that a `(state, symbol)` transition is undefined.
    pub undef_fraction: f64,
    /// Probability that a state is final.
    pub final_fraction: f64,
    /// Number of `Regular` constraints.
    pub constraints: usize,
    pub max_attempts: usize,
}

impl Default for SspParams {
    fn default() -> Self {
        Self {
            periods: 50,
            activities: 10,
            states: 20,
            undef_fraction: 0.3,
            final_fraction: 0.5,
            constraints: 2,
            max_attempts: 1000,
        }
    }
}

fn sample_automaton(rng: &mut Rng, params: &SspParams) -> Automaton {
    let q = params.states;
    let m = params.activities;
    let mut transitions = Vec::new();
    for state in 0..q {
        for symbol in 0..m {
            if !rng.bernoulli(params.undef_fraction) {
                transitions.push((state, symbol, rng.index(q)));
            }
        }
    }
    let mut finals: Vec<usize> = (0..q).filter(|_| rng.bernoulli(params.final_fraction)).collect();
    if finals.is_empty() {
        finals.push(rng.index(q));
    }
    Automaton::new(q, m, &transitions, 0, &finals).expect("sampled automaton is well-formed")
}

/// Random SSP: every automaton starts in state 0, each transition is
/// undefined with probability `undef_fraction` and otherwise targets a
/// uniform state, each state is final with probability `final_fraction`
/// (at least one final state is forced), and profits are uniform in
/// `0..=100`. Attempt `k` draws from sub-stream `k` of `seed`; the first
/// attempt that admits a feasible schedule is returned.
pub fn generate_ssp(params: SspParams, seed: u64) -> Result<SspInstance, InstanceError> {
    if params.periods == 0 || params.activities == 0 || params.states == 0 || params.constraints == 0
    {
        return Err(InstanceError::InvalidParameter(
            "periods, activities, states and constraints must be at least 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&params.undef_fraction) {
        return Err(InstanceError::InvalidParameter(format!(
            "undefined-transition fraction {} outside [0, 1)",
            params.undef_fraction
        )));
    }
    if !(params.final_fraction > 0.0 && params.final_fraction <= 1.0) {
        return Err(InstanceError::InvalidParameter(format!(
            "final-state fraction {} outside (0, 1]",
            params.final_fraction
        )));
    }
    for attempt in 0..params.max_attempts {
        let mut rng = Rng::derive(seed, attempt as u64);
        let automata: Vec<Automaton> = (0..params.constraints)
            .map(|_| sample_automaton(&mut rng, &params))
            .collect();
        let profits: Vec<Vec<u64>> = (0..params.activities)
            .map(|_| {
                (0..params.periods)
                    .map(|_| rng.inclusive(0, SSP_MAX_PROFIT))
                    .collect()
            })
            .collect();
        let instance = SspInstance::new(params.periods, params.activities, automata, profits)?;
        if instance.has_feasible_completion(&PartialAssignment::empty(params.periods)) {
            return Ok(instance);
        }
    }
    Err(InstanceError::GenerationFailed {
        attempts: params.max_attempts,
    })
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Clone, Serialize, Deserialize)]
struct MkpRepr {
    n: usize,
    d: usize,
    profits: Vec<u64>,
    weights: Vec<Vec<u64>>,
    capacities: Vec<u64>,
}

#[derive(Clone, Serialize, Deserialize)]
struct AutomatonRepr {
    states: usize,
    initial: usize,
    #[serde(rename = "final")]
    finals: Vec<usize>,
    transitions: Vec<[usize; 3]>,
}

#[derive(Clone, Serialize, Deserialize)]
struct SspRepr {
    periods: usize,
    activities: usize,
    profits: Vec<Vec<u64>>,
    automata: Vec<AutomatonRepr>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum InstanceRepr {
    Mkp(MkpRepr),
    Ssp(SspRepr),
}

impl TryFrom<InstanceRepr> for Instance {
    type Error = InstanceError;

    fn try_from(repr: InstanceRepr) -> Result<Self, Self::Error> {
        match repr {
            InstanceRepr::Mkp(m) => {
                if m.profits.len() != m.n {
                    return Err(mismatch("profits", m.n, m.profits.len()));
                }
                if m.capacities.len() != m.d {
                    return Err(mismatch("capacities", m.d, m.capacities.len()));
                }
                Ok(Instance::Mkp(MkpInstance::new(m.profits, m.weights, m.capacities)?))
            }
            InstanceRepr::Ssp(s) => {
                let automata = s
                    .automata
                    .iter()
                    .map(|a| {
                        let triples: Vec<(usize, usize, usize)> =
                            a.transitions.iter().map(|t| (t[0], t[1], t[2])).collect();
                        Automaton::new(a.states, s.activities, &triples, a.initial, &a.finals)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Instance::Ssp(SspInstance::new(
                    s.periods,
                    s.activities,
                    automata,
                    s.profits,
                )?))
            }
        }
    }
}

impl From<Instance> for InstanceRepr {
    fn from(instance: Instance) -> Self {
        match instance {
            Instance::Mkp(m) => InstanceRepr::Mkp(MkpRepr {
                n: m.n,
                d: m.d,
                profits: m.profits,
                weights: m.weights,
                capacities: m.capacities,
            }),
            Instance::Ssp(s) => InstanceRepr::Ssp(SspRepr {
                periods: s.periods,
                activities: s.activities,
                profits: s.profits,
                automata: s
                    .automata
                    .iter()
                    .map(|a| AutomatonRepr {
                        states: a.states,
                        initial: a.initial,
                        finals: a.final_states(),
                        transitions: a.transitions().into_iter().map(|(q, x, t)| [q, x, t]).collect(),
                    })
                    .collect(),
            }),
        }
    }
}

/// Parses an instance from text: JSON when the first non-blank character is
/// `{`, the OR-library/Weish MKP layout otherwise.
pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| {
            // Validation failures raised by `try_from` surface as custom serde
            // errors; keep their message.
            InstanceError::Parse {
                line: e.line(),
                field: "json".into(),
                message: e.to_string(),
            }
        })
    } else {
        parse_weish(text).map(Instance::Mkp)
    }
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_instance(&text)
}

/// Writes `instance` as single-line JSON followed by a newline.
pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(instance).expect("instances always serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// OR-library MKP text: a header line `n d [optimum]`, then `n` profits,
/// `d` rows of `n` weights and `d` capacities, whitespace separated.
pub fn parse_weish(text: &str) -> Result<MkpInstance, InstanceError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .skip_while(|(_, l)| l.trim().is_empty());
    let (header_line, header) = lines.next().ok_or_else(|| InstanceError::Parse {
        line: 1,
        field: "header".into(),
        message: "empty file".into(),
    })?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if !(2..=3).contains(&head.len()) {
        return Err(InstanceError::Parse {
            line: header_line,
            field: "header".into(),
            message: format!("expected `n d [optimum]`, found {} tokens", head.len()),
        });
    }
    let number = |tok: &str, line: usize, field: &str| -> Result<u64, InstanceError> {
        tok.parse::<u64>().map_err(|_| InstanceError::Parse {
            line,
            field: field.to_string(),
            message: format!("`{tok}` is not a non-negative integer"),
        })
    };
    let n = number(head[0], header_line, "n")? as usize;
    let d = number(head[1], header_line, "d")? as usize;
    if n == 0 || d == 0 {
        return Err(InstanceError::Parse {
            line: header_line,
            field: "header".into(),
            message: "n and d must be positive".into(),
        });
    }

    let mut tokens = lines.flat_map(|(ln, l)| l.split_whitespace().map(move |t| (ln, t)));
    let mut last_line = header_line;
    let mut take = |field: String| -> Result<u64, InstanceError> {
        match tokens.next() {
            Some((ln, tok)) => {
                last_line = ln;
                number(tok, ln, &field)
            }
            None => Err(InstanceError::Parse {
                line: last_line,
                field,
                message: "unexpected end of file".into(),
            }),
        }
    };
    let profits = (0..n)
        .map(|j| take(format!("profits[{j}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = (0..d)
        .map(|k| {
            (0..n)
                .map(|j| take(format!("weights[{k}][{j}]")))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let capacities = (0..d)
        .map(|k| take(format!("capacities[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    drop(take);
    if let Some((ln, tok)) = tokens.next() {
        return Err(InstanceError::Parse {
            line: ln,
            field: "trailing".into(),
            message: format!("unexpected token `{tok}` after the capacities"),
        });
    }
    MkpInstance::new(profits, weights, capacities)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_mkp() -> MkpInstance {
        MkpInstance::new(vec![3, 4], vec![vec![2, 3], vec![3, 3]], vec![5, 3]).unwrap()
    }

    #[test]
    fn single_item_capacity_is_its_weight() {
        for seed in 0..20 {
            let m = generate_mkp(MkpParams { n: 1, d: 1, tightness: 1.0 }, seed).unwrap();
            assert_eq!(m.capacities()[0], m.weights()[0][0]);
        }
    }

    #[test]
    fn mkp_generation_is_deterministic_and_in_range() {
        let p = MkpParams { n: 30, d: 5, tightness: 0.5 };
        let a = generate_mkp(p, 7).unwrap();
        assert_eq!(a, generate_mkp(p, 7).unwrap());
        assert_ne!(a, generate_mkp(p, 8).unwrap());
        assert!(a.profits().iter().all(|&v| v <= 500));
        assert!(a.weights().iter().flatten().all(|&w| w <= 100));
        for k in 0..5 {
            let total: u64 = a.weights()[k].iter().sum();
            assert!(a.capacities()[k] <= total);
        }
    }

    #[test]
    fn mkp_rejects_bad_parameters() {
        assert!(generate_mkp(MkpParams { n: 0, d: 1, tightness: 0.5 }, 0).is_err());
        assert!(generate_mkp(MkpParams { n: 3, d: 1, tightness: 0.0 }, 0).is_err());
        assert!(generate_mkp(MkpParams { n: 3, d: 1, tightness: 1.5 }, 0).is_err());
    }

    #[test]
    fn ssp_default_configuration() {
        let s = generate_ssp(SspParams::default(), 3).unwrap();
        assert_eq!(s.periods(), 50);
        assert_eq!(s.automata().len(), 2);
        for aut in s.automata() {
            assert_eq!(aut.alphabet(), 10);
            assert_eq!(aut.states(), 20);
        }
        assert!(s.profits().iter().flatten().all(|&p| p <= 100));
        assert!(s.has_feasible_completion(&PartialAssignment::empty(50)));
        assert_eq!(s, generate_ssp(SspParams::default(), 3).unwrap());
    }

    #[test]
    fn ssp_degenerate_parameters() {
        let params = SspParams {
            periods: 2,
            activities: 1,
            states: 1,
            undef_fraction: 0.0,
            final_fraction: 1.0,
            constraints: 1,
            max_attempts: 1,
        };
        let s = generate_ssp(params, 0).unwrap();
        let aut = &s.automata()[0];
        assert_eq!(aut.next(0, 0), Some(0));
        assert!(aut.is_final(0));
        assert!(aut.accepts(&[0, 0]));
    }

    #[test]
    fn ssp_generation_gives_up() {
        // Every transition undefined: no word of length 3 exists.
        let params = SspParams {
            periods: 3,
            activities: 2,
            states: 2,
            undef_fraction: 0.999_999_999,
            final_fraction: 0.5,
            constraints: 1,
            max_attempts: 5,
        };
        assert!(matches!(
            generate_ssp(params, 1),
            Err(InstanceError::GenerationFailed { attempts: 5 })
        ));
    }

    #[test]
    fn automaton_validation() {
        assert!(Automaton::new(2, 2, &[(0, 0, 2)], 0, &[1]).is_err());
        assert!(Automaton::new(2, 2, &[(0, 2, 1)], 0, &[1]).is_err());
        assert!(Automaton::new(2, 2, &[(0, 0, 1), (0, 0, 0)], 0, &[1]).is_err());
        assert!(Automaton::new(2, 2, &[], 2, &[1]).is_err());
        assert!(Automaton::new(2, 2, &[], 0, &[5]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m: Instance = generate_mkp(MkpParams::default(), 11).unwrap().into();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.starts_with(r#"{"kind":"mkp","n":30,"d":5,"profits":["#));
        assert_eq!(parse_instance(&text).unwrap(), m);

        let s: Instance = generate_ssp(SspParams { periods: 6, ..Default::default() }, 2)
            .unwrap()
            .into();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.starts_with(r#"{"kind":"ssp","periods":6,"activities":10"#));
        assert_eq!(parse_instance(&text).unwrap(), s);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m: Instance = tiny_mkp().into();
        write_instance(&m, &path).unwrap();
        assert_eq!(read_instance(&path).unwrap(), m);
        assert!(matches!(
            read_instance(dir.path().join("missing.json")),
            Err(InstanceError::Io { .. })
        ));
    }

    #[test]
    fn profits_length_mismatch() {
        let text = r#"{"kind":"mkp","n":3,"d":1,"profits":[1,2],"weights":[[1,2,3]],"capacities":[4]}"#;
        let err = parse_instance(text).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch in `profits`"), "{err}");
    }

    #[test]
    fn weish_two_items_one_dimension() {
        let text = "2 1\n3\n4\n2\n3\n4\n";
        let m = parse_weish(text).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.d(), 1);
        assert_eq!(m.profits(), &[3, 4]);
        assert_eq!(m.weights(), &[vec![2, 3]]);
        assert_eq!(m.capacities(), &[4]);
        // Header with a known optimum, values spread over lines.
        let m2 = parse_weish("2 1 4\n3 4\n2 3\n4").unwrap();
        assert_eq!(m, m2);
        assert!(matches!(parse_instance(text).unwrap(), Instance::Mkp(_)));
    }

    #[test]
    fn weish_diagnostics() {
        match parse_weish("2 1\n3 4\n2 x\n4\n") {
            Err(InstanceError::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "weights[0][1]");
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_weish("2 1\n3 4\n2 3\n") {
            Err(InstanceError::Parse { field, .. }) => assert_eq!(field, "capacities[0]"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_weish("2 1\n3 4\n2 3\n4 9\n").is_err());
    }

    #[test]
    fn partial_assignment_basics() {
        let p = PartialAssignment::from_prefix(5, &[1, 0]);
        assert_eq!(p.depth(), 2);
        assert!(p.is_prefix());
        let q = PartialAssignment::from_values(vec![None, Some(1), None]);
        assert!(!q.is_prefix());
        assert_eq!(q.free_indices().collect::<Vec<_>>(), vec![0, 2]);
        let inst: Instance = tiny_mkp().into();
        assert!(inst.check_partial(&PartialAssignment::from_values(vec![Some(2), None])).is_err());
        assert!(inst.check_partial(&q).is_err());
        assert!(inst.check_partial(&PartialAssignment::from_values(vec![None, Some(1)])).is_ok());
    }

    #[test]
    fn residual_capacity() {
        let m = tiny_mkp();
        let p = PartialAssignment::from_values(vec![Some(1), None]);
        assert_eq!(m.residual_capacities(&p), Some(vec![3, 0]));
        let both = PartialAssignment::from_values(vec![Some(1), Some(1)]);
        assert_eq!(m.residual_capacities(&both), None);
    }
}
