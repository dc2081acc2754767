//! Lagrangian decomposition, dual bound evaluation and sub-gradient descent.
//!
//! Every constraint `C_i` gets its own copy `X_i` of the variables. The
//! copies of constraints `2..m` are tied to `X_1` through penalties
//! `mu_i · (X_1 - X_i)`, and dropping the ties splits the problem into
//!
//! ```text
//! B(mu) = Phi + sum_i Psi_i
//! Phi   = max { f(X_1) + (sum_i mu_i) · X_1 | C_1(X_1) }
//! Psi_i = max { -mu_i · X_i                 | C_i(X_i) }
//! ```
//!
//! For any finite `mu`, `B(mu)` bounds the best feasible objective from above:
//! a feasible solution is feasible for every copy and cancels every penalty.
//!
//! Knapsack variables are encoded as 0/1 item vectors. Scheduling variables
//! are one-hot `(period, activity)` indicators, so a multiplier coordinate is
//! `j * activities + a`. Coordinates of fixed variables carry no penalty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{Instance, InstanceError, MkpInstance, PartialAssignment, SspInstance};
use crate::subsolvers::{
    solve_knapsack, solve_regular, Infeasible, KnapsackSubproblem, RegularSubproblem,
};

#[derive(Debug, Error)]
pub enum LagrangianError {
    /// Some sub-problem has no solution under the partial assignment, so the
    /// node can be pruned.
    #[error("infeasible: sub-problem {subproblem} has no solution")]
    Infeasible { subproblem: usize },
    #[error("multiplier shape {found:?} does not match the instance ({expected:?})")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Partial(#[from] InstanceError),
    #[error("invalid sub-gradient configuration: {0}")]
    Config(String),
}

/// Position of one multiplier: `block` is the penalized constraint index
/// minus two (constraint 2 is block 0), `index` the duplicated coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub block: usize,
    pub index: usize,
}

/// Lagrangian multipliers `<mu_2, ..., mu_m>`, sign-unrestricted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    blocks: Vec<Vec<f64>>,
}

impl Multipliers {
    pub fn zeros(blocks: usize, len: usize) -> Self {
        Self {
            blocks: vec![vec![0.0; len]; blocks],
        }
    }

    /// All-zero multipliers shaped for `instance`.
    pub fn for_instance(instance: &Instance) -> Self {
        let (b, l) = multiplier_shape(instance);
        Self::zeros(b, l)
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        Self { blocks }
    }

    /// `(number of blocks, coordinates per block)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.blocks.len(), self.blocks.first().map_or(0, Vec::len))
    }

    /// Whether there are `shape.0` blocks of `shape.1` coordinates each.
    /// Unlike comparing [`Multipliers::shape`], this distinguishes block
    /// lengths when there are no blocks at all.
    pub fn has_shape(&self, shape: (usize, usize)) -> bool {
        self.blocks.len() == shape.0 && self.blocks.iter().all(|b| b.len() == shape.1)
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn get(&self, c: Coord) -> f64 {
        self.blocks[c.block][c.index]
    }

    pub fn set(&mut self, c: Coord, v: f64) {
        self.blocks[c.block][c.index] = v;
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().flatten().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn dot(&self, other: &Multipliers) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }
}

/// Multiplier shape of `instance`: `(m - 1, n)` for MKP, `(m - 1, n * |W|)` for SSP.
pub fn multiplier_shape(instance: &Instance) -> (usize, usize) {
    match instance {
        Instance::Mkp(m) => (m.d() - 1, m.n()),
        Instance::Ssp(s) => (s.automata().len() - 1, s.periods() * s.activities()),
    }
}

/// Dual bound at one multiplier vector, with everything needed to form the
/// sub-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub bound: f64,
    /// Optimum of the first sub-problem.
    pub phi: f64,
    /// Optima of sub-problems `2..m`.
    pub psi: Vec<f64>,
    /// Optimal assignment of every sub-problem: item selections (0/1) for
    /// MKP, activity sequences for SSP.
    pub solutions: Vec<Vec<usize>>,
    /// `dB/dmu`: `X_1 - X_i` per coordinate, each in `{-1, 0, 1}`.
    pub subgradient: Multipliers,
}

impl BoundResult {
    /// True when every copy agrees, i.e. `X_1` satisfies all constraints and
    /// `bound` is its objective.
    pub fn is_consistent(&self) -> bool {
        self.subgradient.values().all(|g| g == 0.0)
    }
}

fn check_shape(instance: &Instance, mu: &Multipliers) -> Result<(), LagrangianError> {
    let expected = multiplier_shape(instance);
    if !mu.has_shape(expected) {
        return Err(LagrangianError::Shape {
            expected,
            found: mu.shape(),
        });
    }
    Ok(())
}

/// Evaluates `B(mu)` for the sub-tree rooted at `partial`.
pub fn evaluate_bound(
    instance: &Instance,
    partial: &PartialAssignment,
    mu: &Multipliers,
) -> Result<BoundResult, LagrangianError> {
    instance.check_partial(partial)?;
    check_shape(instance, mu)?;
    match instance {
        Instance::Mkp(m) => Ok(evaluate_mkp(m, partial, mu)?),
        Instance::Ssp(s) => Ok(evaluate_ssp(s, partial, mu)?),
    }
}

fn infeasible(subproblem: usize) -> impl Fn(Infeasible) -> LagrangianError {
    move |_| LagrangianError::Infeasible { subproblem }
}

fn evaluate_mkp(
    inst: &MkpInstance,
    partial: &PartialAssignment,
    mu: &Multipliers,
) -> Result<BoundResult, LagrangianError> {
    let n = inst.n();
    let d = inst.d();
    let profits = inst.profits();

    let mut values: Vec<f64> = profits.iter().map(|&v| v as f64).collect();
    for block in &mu.blocks {
        for j in partial.free_indices() {
            values[j] += block[j];
        }
    }
    let first = solve_knapsack(&KnapsackSubproblem {
        weights: &inst.weights()[0],
        capacity: inst.capacities()[0],
        values: &values,
        fixed: partial,
    })
    .map_err(infeasible(0))?;

    let mut psi = Vec::with_capacity(d - 1);
    let mut solutions = vec![first.selection.iter().map(|&x| x as usize).collect::<Vec<_>>()];
    let mut subgradient = Multipliers::zeros(d - 1, n);
    for k in 1..d {
        let block = &mu.blocks[k - 1];
        let penalty: Vec<f64> = (0..n)
            .map(|j| if partial.is_free(j) { -block[j] } else { 0.0 })
            .collect();
        let sol = solve_knapsack(&KnapsackSubproblem {
            weights: &inst.weights()[k],
            capacity: inst.capacities()[k],
            values: &penalty,
            fixed: partial,
        })
        .map_err(infeasible(k))?;
        let g = subgradient.block_mut(k - 1);
        for j in 0..n {
            g[j] = first.selection[j] as f64 - sol.selection[j] as f64;
        }
        psi.push(sol.value);
        solutions.push(sol.selection.iter().map(|&x| x as usize).collect());
    }
    let bound = first.value + psi.iter().sum::<f64>();
    Ok(BoundResult {
        bound,
        phi: first.value,
        psi,
        solutions,
        subgradient,
    })
}

fn evaluate_ssp(
    inst: &SspInstance,
    partial: &PartialAssignment,
    mu: &Multipliers,
) -> Result<BoundResult, LagrangianError> {
    let n = inst.periods();
    let w = inst.activities();
    let automata = inst.automata();
    let m = automata.len();
    let prefix = partial.prefix_len();

    let mut arcs = vec![0.0; n * w];
    for j in 0..n {
        for a in 0..w {
            arcs[j * w + a] = inst.profit(a, j) as f64;
        }
    }
    for block in &mu.blocks {
        for idx in prefix * w..n * w {
            arcs[idx] += block[idx];
        }
    }
    let first = solve_regular(&RegularSubproblem {
        automaton: &automata[0],
        arc_values: &arcs,
        periods: n,
        fixed: partial,
    })
    .map_err(infeasible(0))?;

    let mut psi = Vec::with_capacity(m - 1);
    let mut solutions = vec![first.sequence.clone()];
    let mut subgradient = Multipliers::zeros(m - 1, n * w);
    for i in 1..m {
        let block = &mu.blocks[i - 1];
        let mut penalty = vec![0.0; n * w];
        for idx in prefix * w..n * w {
            penalty[idx] = -block[idx];
        }
        let sol = solve_regular(&RegularSubproblem {
            automaton: &automata[i],
            arc_values: &penalty,
            periods: n,
            fixed: partial,
        })
        .map_err(infeasible(i))?;
        let g = subgradient.block_mut(i - 1);
        for j in prefix..n {
            g[j * w + first.sequence[j]] += 1.0;
            g[j * w + sol.sequence[j]] -= 1.0;
        }
        psi.push(sol.value);
        solutions.push(sol.sequence);
    }
    let bound = first.value + psi.iter().sum::<f64>();
    Ok(BoundResult {
        bound,
        phi: first.value,
        psi,
        solutions,
        subgradient,
    })
}

/// One descent step `mu_i - alpha (X_1 - X_i)` on every block.
///
/// `X_1 - X_i` is the gradient of `B` at `mu`, so the step moves against it.
pub fn subgradient_step(mu: &Multipliers, bound: &BoundResult, alpha: f64) -> Multipliers {
    debug_assert_eq!(mu.shape(), bound.subgradient.shape());
    let blocks = mu
        .blocks
        .iter()
        .zip(&bound.subgradient.blocks)
        .map(|(m, g)| m.iter().zip(g).map(|(&m, &g)| m - alpha * g).collect())
        .collect();
    Multipliers { blocks }
}

/// Geometric step schedule `alpha_t = alpha0 * decay^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradientConfig {
    pub iterations: usize,
    pub alpha0: f64,
    pub decay: f64,
}

impl SubgradientConfig {
    pub const NODE_ITERATIONS: usize = 20;

    /// Root defaults: 600 iterations with `alpha0 = max profit / 500` and
    /// decay 0.99 for MKP; 40 iterations, `alpha0 = 0.5`, decay 0.95 for SSP.
    pub fn default_for(instance: &Instance) -> Self {
        match instance {
            Instance::Mkp(m) => Self {
                iterations: 600,
                alpha0: m.max_profit().max(1) as f64 / 500.0,
                decay: 0.99,
            },
            Instance::Ssp(_) => Self {
                iterations: 40,
                alpha0: 0.5,
                decay: 0.95,
            },
        }
    }

    pub fn with_iterations(self, iterations: usize) -> Self {
        Self { iterations, ..self }
    }

    pub fn validate(&self) -> Result<(), LagrangianError> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(LagrangianError::Config(format!("alpha0 = {} must be positive", self.alpha0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(LagrangianError::Config(format!("decay = {} outside (0, 1]", self.decay)));
        }
        Ok(())
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.alpha0 * self.decay.powi(t as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientOutcome {
    pub best_bound: f64,
    pub best_mu: Multipliers,
    /// `B(mu_t)` for `t = 0..=iterations`.
    pub trace: Vec<f64>,
    /// Steps actually taken.
    pub steps: usize,
    /// Evaluation at `best_mu`.
    pub best: BoundResult,
}

/// Runs `cfg.iterations` sub-gradient steps from `mu0` and keeps the lowest
/// bound seen. A zero sub-gradient is a fixed point; the remaining trace
/// entries repeat its value without further work.
pub fn optimize_multipliers(
    instance: &Instance,
    partial: &PartialAssignment,
    mu0: &Multipliers,
    cfg: &SubgradientConfig,
) -> Result<SubgradientOutcome, LagrangianError> {
    let mut out = optimize_until(instance, partial, mu0, cfg, |_| false)?;
    let last = *out.trace.last().expect("trace holds the initial bound");
    out.trace.resize(cfg.iterations + 1, last);
    Ok(out)
}

/// Like [`optimize_multipliers`] but stops as soon as `stop(best_bound)`
/// holds or a fixed point is reached; the trace then ends early.
pub fn optimize_until(
    instance: &Instance,
    partial: &PartialAssignment,
    mu0: &Multipliers,
    cfg: &SubgradientConfig,
    stop: impl Fn(f64) -> bool,
) -> Result<SubgradientOutcome, LagrangianError> {
    cfg.validate()?;
    let mut mu = mu0.clone();
    let mut current = evaluate_bound(instance, partial, &mu)?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(current.bound);
    let mut best_mu = mu.clone();
    let mut best = current.clone();
    let mut steps = 0;
    for t in 0..cfg.iterations {
        if stop(best.bound) || current.is_consistent() {
            break;
        }
        mu = subgradient_step(&mu, &current, cfg.step_size(t));
        steps += 1;
        current = evaluate_bound(instance, partial, &mu)?;
        trace.push(current.bound);
        if current.bound < best.bound {
            best = current.clone();
            best_mu = mu.clone();
        }
    }
    Ok(SubgradientOutcome {
        best_bound: best.bound,
        best_mu,
        trace,
        steps,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{Automaton, MkpInstance};

    fn tiny() -> Instance {
        MkpInstance::new(vec![3, 4], vec![vec![2, 3], vec![3, 3]], vec![5, 3])
            .unwrap()
            .into()
    }

    fn none(n: usize) -> PartialAssignment {
        PartialAssignment::empty(n)
    }

    #[test]
    fn zero_multipliers_give_first_constraint_bound() {
        let r = evaluate_bound(&tiny(), &none(2), &Multipliers::zeros(1, 2)).unwrap();
        assert_eq!(r.phi, 7.0);
        assert_eq!(r.psi, vec![0.0]);
        assert_eq!(r.bound, 7.0);
        assert_eq!(r.subgradient.block(0), &[1.0, 1.0]);
    }

    #[test]
    fn ideal_multipliers_close_the_gap() {
        let mu = Multipliers::from_blocks(vec![vec![-3.0, -4.0]]);
        let r = evaluate_bound(&tiny(), &none(2), &mu).unwrap();
        assert_eq!(r.phi, 0.0);
        assert_eq!(r.psi, vec![4.0]);
        assert_eq!(r.bound, 4.0);
    }

    #[test]
    fn shape_is_checked() {
        let err = evaluate_bound(&tiny(), &none(2), &Multipliers::zeros(1, 3)).unwrap_err();
        assert!(matches!(err, LagrangianError::Shape { .. }));
    }

    #[test]
    fn fixed_coordinates_are_inert() {
        let partial = PartialAssignment::from_values(vec![Some(1), None]);
        let a = evaluate_bound(&tiny(), &partial, &Multipliers::from_blocks(vec![vec![0.0, -1.0]])).unwrap();
        let b = evaluate_bound(&tiny(), &partial, &Multipliers::from_blocks(vec![vec![50.0, -1.0]])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subgradient.block(0)[0], 0.0);
    }

    #[test]
    fn infeasible_partial_is_reported() {
        let both = PartialAssignment::from_values(vec![Some(1), Some(1)]);
        let err = evaluate_bound(&tiny(), &both, &Multipliers::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, LagrangianError::Infeasible { subproblem: 1 }));
    }

    #[test]
    fn step_formula() {
        let fake = |g: Vec<f64>| BoundResult {
            bound: 0.0,
            phi: 0.0,
            psi: vec![],
            solutions: vec![],
            subgradient: Multipliers::from_blocks(vec![g]),
        };
        // X1 = [1,0], X2 = [0,0]
        let mu = Multipliers::zeros(1, 2);
        assert_eq!(subgradient_step(&mu, &fake(vec![1.0, 0.0]), 0.5).block(0), &[-0.5, 0.0]);
        // X1 = X2
        let mu = Multipliers::from_blocks(vec![vec![0.3, -2.0]]);
        assert_eq!(subgradient_step(&mu, &fake(vec![0.0, 0.0]), 3.0), mu);
        // X1 = [0,1], X2 = [1,1]
        let mu = Multipliers::from_blocks(vec![vec![1.0, -1.0]]);
        assert_eq!(subgradient_step(&mu, &fake(vec![-1.0, 0.0]), 2.0).block(0), &[3.0, -1.0]);
    }

    #[test]
    fn zero_iterations() {
        let cfg = SubgradientConfig { iterations: 0, alpha0: 1.0, decay: 0.97 };
        let mu0 = Multipliers::from_blocks(vec![vec![-1.0, 0.5]]);
        let out = optimize_multipliers(&tiny(), &none(2), &mu0, &cfg).unwrap();
        let b0 = evaluate_bound(&tiny(), &none(2), &mu0).unwrap().bound;
        assert_eq!(out.trace, vec![b0]);
        assert_eq!(out.best_bound, b0);
        assert_eq!(out.best_mu, mu0);
    }

    #[test]
    fn descent_on_tiny_instance() {
        let cfg = SubgradientConfig { iterations: 200, alpha0: 1.0, decay: 0.97 };
        let out = optimize_multipliers(&tiny(), &none(2), &Multipliers::zeros(1, 2), &cfg).unwrap();
        assert_eq!(out.trace.len(), 201);
        assert!(out.best_bound <= 7.0 && out.best_bound >= 4.0 - 1e-9);
        assert!(out.best_bound < 7.0);
        let min = out.trace.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(min, out.best_bound);
    }

    #[test]
    fn config_validation() {
        let bad = SubgradientConfig { iterations: 3, alpha0: 0.0, decay: 0.5 };
        assert!(bad.validate().is_err());
        let bad = SubgradientConfig { iterations: 3, alpha0: 1.0, decay: 1.5 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ssp_bound_and_subgradient() {
        // Two automata over {a, b} on 2 periods: one accepts only words
        // starting with a, the other only words ending with b.
        let starts_a = Automaton::new(2, 2, &[(0, 0, 1), (1, 0, 1), (1, 1, 1)], 0, &[1]).unwrap();
        let ends_b = Automaton::new(2, 2, &[(0, 0, 0), (0, 1, 1), (1, 0, 0), (1, 1, 1)], 0, &[1]).unwrap();
        let inst: Instance = SspInstance::new(2, 2, vec![starts_a, ends_b], vec![vec![1, 5], vec![0, 2]])
            .unwrap()
            .into();
        let mu = Multipliers::for_instance(&inst);
        assert_eq!(mu.shape(), (1, 4));
        let r = evaluate_bound(&inst, &none(2), &mu).unwrap();
        // Phi: best word starting with a: "aa" = 1 + 5 = 6; Psi = 0.
        assert_eq!(r.phi, 6.0);
        assert_eq!(r.bound, 6.0);
        assert_eq!(r.solutions[0], vec![0, 0]);
        // Psi picks the lowest-index accepted word "ab".
        assert_eq!(r.solutions[1], vec![0, 1]);
        assert_eq!(r.subgradient.block(0), &[0.0, 0.0, 1.0, -1.0]);
        // Optimum is "ab" = 1 + 2 = 3.
        let cfg = SubgradientConfig { iterations: 40, alpha0: 0.5, decay: 0.95 };
        let out = optimize_multipliers(&inst, &none(2), &mu, &cfg).unwrap();
        assert!(out.best_bound < 6.0 && out.best_bound >= 3.0 - 1e-9);
    }
}
