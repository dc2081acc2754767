//! Depth-first branch-and-bound with propagation and Lagrangian bounds.
//!
//! Every node propagates, computes a dual bound according to the
//! [`BoundingMode`], and is pruned when the bound cannot beat the incumbent.
//! The trivial bound (best value of every remaining domain) is always
//! available; Lagrangian modes use the smaller of the two.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{encode, EncodingError};
use crate::instances::{Automaton, Instance, InstanceError, LayeredSupport, MkpInstance, PartialAssignment};
use crate::lagrangian::{
    evaluate_bound, optimize_until, LagrangianError, Multipliers, SubgradientConfig,
};
use crate::neural::{gnn_forward, GnnParams, NeuralError};

/// Per-variable allowed values, `domains[j][v]`.
pub type Domains = Vec<Vec<bool>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundingMode {
    Cp,
    CpSg,
    CpLearnAll,
    CpLearnAllSg,
    CpLearnRootSg,
}

impl BoundingMode {
    pub const ALL: [BoundingMode; 5] = [
        BoundingMode::Cp,
        BoundingMode::CpSg,
        BoundingMode::CpLearnAll,
        BoundingMode::CpLearnAllSg,
        BoundingMode::CpLearnRootSg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundingMode::Cp => "cp",
            BoundingMode::CpSg => "cp+sg",
            BoundingMode::CpLearnAll => "cp+learn-all",
            BoundingMode::CpLearnAllSg => "cp+learn-all+sg",
            BoundingMode::CpLearnRootSg => "cp+learn-root+sg",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(
            self,
            BoundingMode::CpLearnAll | BoundingMode::CpLearnAllSg | BoundingMode::CpLearnRootSg
        )
    }

    pub fn uses_subgradient(self) -> bool {
        matches!(
            self,
            BoundingMode::CpSg | BoundingMode::CpLearnAllSg | BoundingMode::CpLearnRootSg
        )
    }
}

impl fmt::Display for BoundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoundingMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = BoundingMode::ALL.iter().map(|m| m.name()).collect();
                format!("unknown mode '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("mode {0} requires a model")]
    MissingModel(BoundingMode),
    #[error(transparent)]
    Partial(#[from] InstanceError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveLimits {
    pub time: Option<Duration>,
    pub max_nodes: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub mode: BoundingMode,
    pub limits: SolveLimits,
    /// Schedule at the root; other nodes use the same steps with
    /// `node_iterations` iterations.
    pub sg: SubgradientConfig,
    pub node_iterations: usize,
    /// Lagrangian bounds are computed only at depths divisible by this.
    pub bound_every: usize,
    /// Sub-tree to search; the empty assignment when `None`.
    pub root: Option<PartialAssignment>,
}

impl SolveOptions {
    pub fn new(instance: &Instance, mode: BoundingMode) -> Self {
        Self {
            mode,
            limits: SolveLimits::default(),
            sg: SubgradientConfig::default_for(instance),
            node_iterations: SubgradientConfig::NODE_ITERATIONS,
            bound_every: 1,
            root: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    TimedOut,
    Infeasible,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "Optimal",
            Status::TimedOut => "TimedOut",
            Status::Infeasible => "Infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub status: Status,
    /// Best objective found, if any.
    pub objective: Option<i64>,
    pub solution: Option<Vec<usize>>,
    pub nodes: u64,
    pub wallclock_seconds: f64,
    pub bound_evaluations: u64,
    pub sg_iterations: u64,
    /// Bound used at the root node; `None` when the root failed propagation.
    pub root_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prune {
    Keep,
    Prune,
}

/// Prunes when the integral part of `bound` cannot beat `incumbent`.
pub fn prune_test(bound: f64, incumbent: Option<i64>) -> Prune {
    match incumbent {
        Some(best) if (bound + 1e-6).floor() <= best as f64 => Prune::Prune,
        _ => Prune::Keep,
    }
}

/// Domains matching `partial`: singletons for fixed variables.
pub fn initial_domains(instance: &Instance, partial: &PartialAssignment) -> Domains {
    let size = instance.domain_size();
    (0..partial.len())
        .map(|j| match partial.get(j) {
            Some(v) => (0..size).map(|a| a == v).collect(),
            None => vec![true; size],
        })
        .collect()
}

/// Excludes every free item that no longer fits some dimension. Returns
/// `false` when the items fixed to 1 already overload a capacity.
pub fn propagate_knapsack(inst: &MkpInstance, partial: &PartialAssignment, domains: &mut Domains) -> bool {
    let Some(residual) = inst.residual_capacities(partial) else {
        return false;
    };
    for j in partial.free_indices() {
        if (0..inst.d()).any(|k| inst.weights()[k][j] > residual[k]) {
            domains[j][1] = false;
        }
    }
    domains.iter().all(|d| d.iter().any(|&x| x))
}

/// Domain-consistent filtering for one automaton. Returns `false` when some
/// domain empties.
pub fn propagate_regular(automaton: &Automaton, domains: &mut Domains) -> bool {
    let support = LayeredSupport::new(automaton, domains);
    for (j, dom) in domains.iter_mut().enumerate() {
        for a in 0..dom.len() {
            if dom[a] {
                dom[a] = (0..automaton.states()).any(|q| support.supports_arc(automaton, j, q, a));
            }
        }
    }
    domains.iter().all(|d| d.iter().any(|&x| x))
}

/// Propagates every constraint to a fixpoint.
pub fn propagate(instance: &Instance, partial: &PartialAssignment, domains: &mut Domains) -> bool {
    match instance {
        Instance::Mkp(m) => propagate_knapsack(m, partial, domains),
        Instance::Ssp(s) => loop {
            let before = domains.clone();
            for aut in s.automata() {
                if !propagate_regular(aut, domains) {
                    return false;
                }
            }
            if *domains == before {
                return true;
            }
        },
    }
}

/// Best value every variable could still take, summed.
fn trivial_bound(instance: &Instance, domains: &Domains) -> f64 {
    match instance {
        Instance::Mkp(m) => (0..m.n())
            .filter(|&j| domains[j][1])
            .map(|j| m.profits()[j] as f64)
            .sum(),
        Instance::Ssp(s) => domains
            .iter()
            .enumerate()
            .map(|(j, dom)| {
                (0..dom.len())
                    .filter(|&a| dom[a])
                    .map(|a| s.profit(a, j))
                    .max()
                    .unwrap_or(0) as f64
            })
            .sum(),
    }
}

struct Search<'a> {
    instance: &'a Instance,
    model: Option<&'a GnnParams>,
    opts: &'a SolveOptions,
    node_cfg: SubgradientConfig,
    order: Vec<usize>,
    start: Instant,
    nodes: u64,
    bound_evaluations: u64,
    sg_iterations: u64,
    incumbent: Option<(i64, Vec<usize>)>,
    root_bound: Option<f64>,
    limit_hit: bool,
}

impl Search<'_> {
    fn out_of_budget(&mut self) -> bool {
        if self.limit_hit {
            return true;
        }
        let nodes = self.opts.limits.max_nodes.is_some_and(|max| self.nodes >= max);
        let time = self.opts.limits.time.is_some_and(|t| self.start.elapsed() >= t);
        self.limit_hit = nodes || time;
        self.limit_hit
    }

    fn incumbent_value(&self) -> Option<i64> {
        self.incumbent.as_ref().map(|(v, _)| *v)
    }

    fn learned(&self, partial: &PartialAssignment) -> Result<Multipliers, SolveError> {
        let model = self.model.ok_or(SolveError::MissingModel(self.opts.mode))?;
        let graph = encode(self.instance, partial)?;
        Ok(gnn_forward(model, &graph)?.mu)
    }

    /// Lagrangian bound at a node plus the multipliers to pass to children.
    fn lagrangian_bound(
        &mut self,
        partial: &PartialAssignment,
        warm: Option<&Multipliers>,
        root: bool,
    ) -> Result<Option<(f64, Multipliers)>, SolveError> {
        use BoundingMode::*;
        let mode = self.opts.mode;
        let mu0 = match mode {
            Cp => return Ok(None),
            CpLearnAll | CpLearnAllSg => self.learned(partial)?,
            CpLearnRootSg if root => self.learned(partial)?,
            CpSg | CpLearnRootSg => warm
                .cloned()
                .unwrap_or_else(|| Multipliers::for_instance(self.instance)),
        };
        if !mode.uses_subgradient() {
            self.bound_evaluations += 1;
            return match evaluate_bound(self.instance, partial, &mu0) {
                Ok(r) => Ok(Some((r.bound, mu0))),
                Err(LagrangianError::Infeasible { .. }) => Ok(Some((f64::NEG_INFINITY, mu0))),
                Err(e) => Err(e.into()),
            };
        }
        let cfg = if root { self.opts.sg } else { self.node_cfg };
        let incumbent = self.incumbent_value();
        let outcome = optimize_until(self.instance, partial, &mu0, &cfg, |b| {
            prune_test(b, incumbent) == Prune::Prune
        });
        match outcome {
            Ok(o) => {
                self.bound_evaluations += o.steps as u64 + 1;
                self.sg_iterations += o.steps as u64;
                Ok(Some((o.best_bound, o.best_mu)))
            }
            Err(LagrangianError::Infeasible { .. }) => {
                self.bound_evaluations += 1;
                Ok(Some((f64::NEG_INFINITY, mu0)))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn visit(
        &mut self,
        partial: PartialAssignment,
        warm: Option<&Multipliers>,
        depth: usize,
    ) -> Result<(), SolveError> {
        if self.out_of_budget() {
            return Ok(());
        }
        self.nodes += 1;
        let root = depth == 0;

        let mut domains = initial_domains(self.instance, &partial);
        if !propagate(self.instance, &partial, &mut domains) {
            return Ok(());
        }
        // Forced exclusions become part of the assignment the bound sees.
        let partial = match self.instance {
            Instance::Mkp(_) => {
                let mut p = partial;
                for j in 0..p.len() {
                    if p.is_free(j) && !domains[j][1] {
                        p.set(j, Some(0));
                    }
                }
                p
            }
            Instance::Ssp(_) => partial,
        };

        if let Some(values) = partial.complete() {
            let objective = self.instance.evaluate(&values);
            if root {
                self.root_bound = objective.map(|v| v as f64);
            }
            if let Some(obj) = objective {
                if self.incumbent_value().is_none_or(|best| obj > best) {
                    self.incumbent = Some((obj, values));
                }
            }
            return Ok(());
        }

        let mut bound = trivial_bound(self.instance, &domains);
        let mut child_mu = None;
        if depth % self.opts.bound_every.max(1) == 0 {
            if let Some((ld, mu)) = self.lagrangian_bound(&partial, warm, root)? {
                bound = bound.min(ld);
                child_mu = Some(mu);
            }
        }
        if root {
            self.root_bound = Some(bound);
        }
        if prune_test(bound, self.incumbent_value()) == Prune::Prune {
            return Ok(());
        }
        let warm_child = child_mu.as_ref().or(warm);

        match self.instance {
            Instance::Mkp(_) => {
                let j = *self
                    .order
                    .iter()
                    .find(|&&j| partial.is_free(j))
                    .expect("incomplete assignment has a free item");
                for v in [1, 0] {
                    if domains[j][v] {
                        self.visit(partial.with(j, v), warm_child, depth + 1)?;
                    }
                }
            }
            Instance::Ssp(s) => {
                let j = partial.prefix_len();
                let mut values: Vec<usize> = (0..s.activities()).filter(|&a| domains[j][a]).collect();
                values.sort_by_key(|&a| (std::cmp::Reverse(s.profit(a, j)), a));
                for a in values {
                    self.visit(partial.with(j, a), warm_child, depth + 1)?;
                }
            }
        }
        Ok(())
    }
}

/// MKP branching order: decreasing `v_j / (1 + Σ_k w_kj / W_k)`, ties by index.
fn branching_order(instance: &Instance) -> Vec<usize> {
    let Instance::Mkp(m) = instance else {
        return Vec::new();
    };
    let key = |j: usize| {
        let load: f64 = (0..m.d())
            .map(|k| m.weights()[k][j] as f64 / m.capacities()[k].max(1) as f64)
            .sum();
        m.profits()[j] as f64 / (1.0 + load)
    };
    let mut order: Vec<usize> = (0..m.n()).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    order
}

pub fn solve(
    instance: &Instance,
    model: Option<&GnnParams>,
    opts: &SolveOptions,
) -> Result<SolveResult, SolveError> {
    if opts.mode.needs_model() && model.is_none() {
        return Err(SolveError::MissingModel(opts.mode));
    }
    opts.sg.validate()?;
    let root = opts
        .root
        .clone()
        .unwrap_or_else(|| PartialAssignment::empty(instance.variable_count()));
    instance.check_partial(&root)?;
    let mut search = Search {
        instance,
        model,
        opts,
        node_cfg: opts.sg.with_iterations(opts.node_iterations),
        order: branching_order(instance),
        start: Instant::now(),
        nodes: 0,
        bound_evaluations: 0,
        sg_iterations: 0,
        incumbent: None,
        root_bound: None,
        limit_hit: false,
    };
    search.visit(root, None, 0)?;
    let status = if search.limit_hit {
        Status::TimedOut
    } else if search.incumbent.is_some() {
        Status::Optimal
    } else {
        Status::Infeasible
    };
    let (objective, solution) = match search.incumbent {
        Some((v, s)) => (Some(v), Some(s)),
        None => (None, None),
    };
    Ok(SolveResult {
        status,
        objective,
        solution,
        nodes: search.nodes,
        wallclock_seconds: search.start.elapsed().as_secs_f64(),
        bound_evaluations: search.bound_evaluations,
        sg_iterations: search.sg_iterations,
        root_bound: search.root_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{EDGE_FEATURES, MKP_NODE_FEATURES, SSP_NODE_FEATURES};
    use crate::instances::{generate_mkp, generate_ssp, MkpParams, SspInstance, SspParams};
    use crate::neural::ArchConfig;

    fn tiny() -> Instance {
        MkpInstance::new(vec![3, 4], vec![vec![2, 3], vec![3, 3]], vec![5, 3])
            .unwrap()
            .into()
    }

    fn model_for(instance: &Instance) -> GnnParams {
        let p = match instance {
            Instance::Mkp(_) => MKP_NODE_FEATURES,
            Instance::Ssp(_) => SSP_NODE_FEATURES,
        };
        let mut arch = ArchConfig::standard(p, EDGE_FEATURES);
        arch.hidden = 8;
        arch.head = vec![8, 8];
        GnnParams::init(&arch, 11)
    }

    fn brute_force(instance: &Instance) -> Option<i64> {
        let n = instance.variable_count();
        let size = instance.domain_size();
        let mut best = None;
        let mut x = vec![0usize; n];
        loop {
            if let Some(v) = instance.evaluate(&x) {
                best = best.max(Some(v));
            }
            let mut i = 0;
            while i < n && x[i] + 1 == size {
                x[i] = 0;
                i += 1;
            }
            if i == n {
                return best;
            }
            x[i] += 1;
        }
    }

    fn solve_mode(instance: &Instance, mode: BoundingMode, model: &GnnParams) -> SolveResult {
        let opts = SolveOptions::new(instance, mode);
        solve(instance, mode.needs_model().then_some(model), &opts).unwrap()
    }

    #[test]
    fn mode_names_round_trip() {
        for m in BoundingMode::ALL {
            assert_eq!(m.name().parse::<BoundingMode>().unwrap(), m);
        }
        assert!("cp+magic".parse::<BoundingMode>().is_err());
    }

    #[test]
    fn prune_examples() {
        assert_eq!(prune_test(6.9999999, Some(7)), Prune::Prune);
        // No integer objective above 7 fits under 7.5.
        assert_eq!(prune_test(7.5, Some(7)), Prune::Prune);
        assert_eq!(prune_test(7.5, Some(6)), Prune::Keep);
        assert_eq!(prune_test(7.5, None), Prune::Keep);
        assert_eq!(prune_test(8.0, Some(7)), Prune::Keep);
    }

    #[test]
    fn knapsack_propagation() {
        let inst = MkpInstance::new(vec![1, 1, 1], vec![vec![3, 3, 1]], vec![5]).unwrap();
        let p = PartialAssignment::from_values(vec![Some(1), None, None]);
        let mut d = initial_domains(&inst.clone().into(), &p);
        assert!(propagate_knapsack(&inst, &p, &mut d));
        assert_eq!(d, vec![vec![false, true], vec![true, false], vec![true, true]]);

        let untouched = PartialAssignment::empty(3);
        let mut d = initial_domains(&inst.clone().into(), &untouched);
        assert!(propagate_knapsack(&inst, &untouched, &mut d));
        assert_eq!(d, vec![vec![true, true]; 3]);

        let over = PartialAssignment::from_values(vec![Some(1), Some(1), None]);
        let mut d = initial_domains(&inst.clone().into(), &over);
        assert!(!propagate_knapsack(&inst, &over, &mut d));
    }

    #[test]
    fn regular_propagation() {
        // Accepts only "aa".
        let aa = Automaton::new(3, 2, &[(0, 0, 1), (1, 0, 2)], 0, &[2]).unwrap();
        let mut d = vec![vec![true, true]; 2];
        assert!(propagate_regular(&aa, &mut d));
        assert_eq!(d, vec![vec![true, false]; 2]);

        let all = Automaton::new(1, 2, &[(0, 0, 0), (0, 1, 0)], 0, &[0]).unwrap();
        let mut d = vec![vec![true, true]; 4];
        assert!(propagate_regular(&all, &mut d));
        assert_eq!(d, vec![vec![true, true]; 4]);

        let mut d = vec![vec![true, true]; 1];
        assert!(!propagate_regular(&aa, &mut d));
    }

    #[test]
    fn tiny_instance_in_every_mode() {
        let inst = tiny();
        let model = model_for(&inst);
        for mode in BoundingMode::ALL {
            let r = solve_mode(&inst, mode, &model);
            assert_eq!(r.status, Status::Optimal, "{mode}");
            assert_eq!(r.objective, Some(4), "{mode}");
            assert_eq!(inst.evaluate(r.solution.as_ref().unwrap()), Some(4));
            assert!(r.nodes >= 1);
        }
    }

    #[test]
    fn missing_model_is_an_error() {
        let inst = tiny();
        let opts = SolveOptions::new(&inst, BoundingMode::CpLearnAll);
        assert!(matches!(solve(&inst, None, &opts), Err(SolveError::MissingModel(_))));
    }

    #[test]
    fn empty_language_is_infeasible() {
        let aa = Automaton::new(3, 2, &[(0, 0, 1), (1, 0, 2)], 0, &[2]).unwrap();
        let inst: Instance = SspInstance::new(3, 2, vec![aa.clone(), aa], vec![vec![1; 3], vec![1; 3]])
            .unwrap()
            .into();
        let model = model_for(&inst);
        for mode in BoundingMode::ALL {
            let r = solve_mode(&inst, mode, &model);
            assert_eq!(r.status, Status::Infeasible);
            assert_eq!(r.objective, None);
        }
    }

    #[test]
    fn node_limit_times_out() {
        let inst: Instance = generate_mkp(MkpParams { n: 12, d: 3, tightness: 0.5 }, 5).unwrap().into();
        let mut opts = SolveOptions::new(&inst, BoundingMode::Cp);
        opts.limits.max_nodes = Some(1);
        let r = solve(&inst, None, &opts).unwrap();
        assert_eq!(r.status, Status::TimedOut);
        assert_eq!(r.nodes, 1);
    }

    #[test]
    fn modes_agree_with_brute_force() {
        for seed in 0..15u64 {
            let mkp: Instance = generate_mkp(
                MkpParams {
                    n: 6 + (seed as usize % 7),
                    d: 2 + (seed as usize % 3),
                    tightness: 0.5,
                },
                seed,
            )
            .unwrap()
            .into();
            let ssp: Instance = generate_ssp(
                SspParams {
                    periods: 3 + (seed as usize % 3),
                    activities: 3,
                    states: 3,
                    constraints: 2,
                    ..SspParams::default()
                },
                seed,
            )
            .unwrap()
            .into();
            for inst in [mkp, ssp] {
                let expected = brute_force(&inst);
                let model = model_for(&inst);
                for mode in BoundingMode::ALL {
                    let r = solve_mode(&inst, mode, &model);
                    assert_eq!(r.objective, expected, "seed {seed} {mode}");
                    let again = solve_mode(&inst, mode, &model);
                    assert_eq!((r.nodes, r.solution.clone()), (again.nodes, again.solution));
                }
            }
        }
    }

    #[test]
    fn root_partial_restricts_the_search() {
        let inst = tiny();
        let mut opts = SolveOptions::new(&inst, BoundingMode::CpSg);
        opts.root = Some(PartialAssignment::from_values(vec![Some(0), None]));
        let r = solve(&inst, None, &opts).unwrap();
        assert_eq!(r.objective, Some(4));
        opts.root = Some(PartialAssignment::from_values(vec![Some(1), None]));
        let r = solve(&inst, None, &opts).unwrap();
        assert_eq!(r.objective, Some(3));
    }
}
