//! Self-supervised training: the loss is the dual bound itself.
//!
//! Each epoch samples an `(instance, partial)` entry, predicts multipliers,
//! evaluates `B(mu)` and back-propagates its sub-gradient `X_1 - X_i`
//! through the network before an Adam step.

use std::path::PathBuf;
use std::time::Instant;

use log::warn;
use thiserror::Error;

use crate::encoding::{encode, EncodingError, EDGE_FEATURES, MKP_NODE_FEATURES, SSP_NODE_FEATURES};
use crate::instances::{Family, Instance, InstanceError, MkpInstance, PartialAssignment, SspInstance};
use crate::lagrangian::{evaluate_bound, LagrangianError, Multipliers};
use crate::neural::{
    adam_step, gnn_backward, gnn_forward, load_model, AdamState, ArchConfig, GnnParams, ModelMeta, NeuralError,
    DEFAULT_LR,
};
use crate::rng::Rng;
use crate::solver::{initial_domains, propagate, solve, BoundingMode, SolveLimits, SolveOptions, Status};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset mixes {0} and {1} instances")]
    MixedFamilies(Family, Family),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("could not draw a feasible partial assignment in {attempts} attempts")]
    ResampleExhausted { attempts: usize },
    #[error("initial model is for {model}, dataset is {data}")]
    FamilyMismatch { model: Family, data: Family },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Solve(#[from] crate::solver::SolveError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub instance: usize,
    pub partial: PartialAssignment,
}

/// Instances of one family plus the partial assignments to train on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    family: Family,
    instances: Vec<Instance>,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, samples: Vec<Sample>) -> Result<Self, TrainError> {
        let family = instances.first().ok_or(TrainError::EmptyDataset)?.family();
        if let Some(other) = instances.iter().find(|i| i.family() != family) {
            return Err(TrainError::MixedFamilies(family, other.family()));
        }
        if samples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for s in &samples {
            let inst = instances
                .get(s.instance)
                .ok_or_else(|| TrainError::Config(format!("sample refers to instance {}", s.instance)))?;
            inst.check_partial(&s.partial)?;
        }
        Ok(Self {
            family,
            instances,
            samples,
        })
    }

    /// One empty-partial sample per instance.
    pub fn from_instances(instances: Vec<Instance>) -> Result<Self, TrainError> {
        let samples = instances
            .iter()
            .enumerate()
            .map(|(i, inst)| Sample {
                instance: i,
                partial: PartialAssignment::empty(inst.variable_count()),
            })
            .collect();
        Self::new(instances, samples)
    }

    /// `count` augmented samples per instance, drawn with `augment`.
    pub fn augmented(instances: Vec<Instance>, depth: usize, count: usize, seed: u64) -> Result<Self, TrainError> {
        let mut samples = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            for partial in augment(inst, depth, count, Rng::derive(seed, i as u64).next_u64())? {
                samples.push(Sample { instance: i, partial });
            }
        }
        Self::new(instances, samples)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn entry(&self, k: usize) -> (&Instance, &PartialAssignment) {
        let s = &self.samples[k];
        (&self.instances[s.instance], &s.partial)
    }
}

const AUGMENT_ATTEMPTS: usize = 1000;

/// `count` partial assignments of `instance` (at least one): the empty one
/// first, then assignments of uniformly random depth in `0..=depth`, each
/// admitting a feasible completion.
pub fn augment(
    instance: &Instance,
    depth: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PartialAssignment>, TrainError> {
    let n = instance.variable_count();
    let max_depth = depth.min(n.saturating_sub(1));
    let mut rng = Rng::new(seed);
    let mut out = vec![PartialAssignment::empty(n)];
    while out.len() < count {
        let d = rng.index(max_depth + 1);
        let mut drawn = None;
        for _ in 0..AUGMENT_ATTEMPTS {
            let candidate = match instance {
                Instance::Mkp(m) => draw_mkp(m, d, &mut rng),
                Instance::Ssp(s) => draw_ssp(instance, s, d, &mut rng),
            };
            if let Some(p) = candidate {
                drawn = Some(p);
                break;
            }
        }
        out.push(drawn.ok_or(TrainError::ResampleExhausted {
            attempts: AUGMENT_ATTEMPTS,
        })?);
    }
    Ok(out)
}

fn draw_mkp(inst: &MkpInstance, depth: usize, rng: &mut Rng) -> Option<PartialAssignment> {
    let mut p = PartialAssignment::empty(inst.n());
    for j in rng.sample_distinct(inst.n(), depth) {
        p.set(j, Some(rng.index(2)));
    }
    // Excluding every remaining item completes any capacity-respecting partial.
    inst.residual_capacities(&p).map(|_| p)
}

fn draw_ssp(instance: &Instance, inst: &SspInstance, depth: usize, rng: &mut Rng) -> Option<PartialAssignment> {
    let mut p = PartialAssignment::empty(inst.periods());
    for j in 0..depth {
        let mut domains = initial_domains(instance, &p);
        if !propagate(instance, &p, &mut domains) {
            return None;
        }
        let values: Vec<usize> = (0..inst.activities()).filter(|&a| domains[j][a]).collect();
        p.set(j, Some(values[rng.index(values.len())]));
    }
    inst.has_feasible_completion(&p).then_some(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub augmentation_depth: usize,
    pub batch_size: usize,
    /// Invoke the checkpoint hook every this many epochs; 0 disables it.
    pub checkpoint_every: usize,
    /// Start from this model instead of a fresh initialization.
    pub init_model: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: DEFAULT_LR,
            seed: 0,
            augmentation_depth: 5,
            batch_size: 1,
            checkpoint_every: 0,
            init_model: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Standard architecture for a family's graphs.
pub fn arch_for(family: Family) -> ArchConfig {
    match family {
        Family::Mkp => ArchConfig::standard(MKP_NODE_FEATURES, EDGE_FEATURES),
        Family::Ssp => ArchConfig::standard(SSP_NODE_FEATURES, EDGE_FEATURES),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Dataset entries drawn this epoch.
    pub samples: Vec<usize>,
    /// Mean bound over the non-skipped samples; `None` when all were skipped.
    pub mean_bound: Option<f64>,
    pub wallclock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GnnParams,
    pub meta: ModelMeta,
    pub history: Vec<EpochRecord>,
    pub optimizer_steps: usize,
    pub skipped_samples: usize,
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(dataset, cfg, |_, _, _| Ok(()))
}

/// Trains and calls `checkpoint(epoch, params, meta)` every
/// `cfg.checkpoint_every` epochs.
pub fn train_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut checkpoint: impl FnMut(usize, &GnnParams, &ModelMeta) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let (mut params, prior_epochs) = match &cfg.init_model {
        Some(path) => {
            let (params, meta) = load_model(path)?;
            if meta.family != dataset.family() {
                return Err(TrainError::FamilyMismatch {
                    model: meta.family,
                    data: dataset.family(),
                });
            }
            (params, meta.epochs)
        }
        None => (GnnParams::init(&arch_for(dataset.family()), cfg.seed), 0),
    };
    let mut meta = ModelMeta {
        family: dataset.family(),
        arch: params.arch().clone(),
        seed: cfg.seed,
        epochs: prior_epochs,
    };
    let mut adam = AdamState::new(&params);
    let mut rng = Rng::derive(cfg.seed, 1);
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut skipped = 0;
    let mut steps = 0;

    for epoch in 1..=cfg.epochs {
        let mut grads = params.zeros_like();
        let mut bounds = Vec::with_capacity(cfg.batch_size);
        let mut drawn = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let k = rng.index(dataset.len());
            drawn.push(k);
            match sample_gradient(&params, dataset, k) {
                Ok((bound, g)) => {
                    grads.add_scaled(&g, 1.0)?;
                    bounds.push(bound);
                }
                Err(TrainError::Encoding(EncodingError::Infeasible(why))) => {
                    warn!("epoch {epoch}: skipping infeasible sample {k}: {why}");
                    skipped += 1;
                }
                Err(TrainError::Lagrangian(LagrangianError::Infeasible { subproblem })) => {
                    warn!("epoch {epoch}: skipping sample {k}: sub-problem {subproblem} infeasible");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if !bounds.is_empty() {
            grads.scale(1.0 / bounds.len() as f64);
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
            steps += 1;
        }
        meta.epochs = prior_epochs + epoch as u64;
        history.push(EpochRecord {
            epoch,
            samples: drawn,
            mean_bound: (!bounds.is_empty()).then(|| bounds.iter().sum::<f64>() / bounds.len() as f64),
            wallclock_seconds: start.elapsed().as_secs_f64(),
        });
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoint(epoch, &params, &meta)?;
        }
    }
    Ok(TrainOutcome {
        params,
        meta,
        history,
        optimizer_steps: steps,
        skipped_samples: skipped,
    })
}

/// Bound and parameter gradient for one dataset entry.
pub fn sample_gradient(params: &GnnParams, dataset: &Dataset, k: usize) -> Result<(f64, GnnParams), TrainError> {
    let (instance, partial) = dataset.entry(k);
    let graph = encode(instance, partial)?;
    let forward = gnn_forward(params, &graph)?;
    let bound = evaluate_bound(instance, partial, &forward.mu)?;
    let grads = gnn_backward(params, &forward.cache, &bound.subgradient)?;
    Ok((bound.bound, grads))
}

/// Node budget per instance when computing optima for gaps.
pub const GAP_NODE_BUDGET: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub bounds: Vec<f64>,
    pub mean_bound: f64,
    /// `None` when some optimum could not be computed.
    pub mean_gap_percent: Option<f64>,
}

/// Optimum of every entry, `None` where the solver ran out of budget.
pub fn compute_optima(dataset: &Dataset, max_nodes: u64) -> Result<Vec<Option<i64>>, TrainError> {
    (0..dataset.len())
        .map(|k| {
            let (instance, partial) = dataset.entry(k);
            let mut opts = SolveOptions::new(instance, BoundingMode::CpSg);
            opts.limits = SolveLimits {
                time: None,
                max_nodes: Some(max_nodes),
            };
            opts.root = Some(partial.clone());
            let r = solve(instance, None, &opts)?;
            Ok(match r.status {
                Status::Optimal => r.objective,
                _ => None,
            })
        })
        .collect()
}

/// Gap of `bound` over `optimum` in percent; the denominator is at least 1.
pub fn gap_percent(bound: f64, optimum: i64) -> f64 {
    100.0 * (bound - optimum as f64) / (optimum.abs().max(1) as f64)
}

/// Mean bound under multipliers from `predict`, with gaps where `optima`
/// are all known.
pub fn evaluate_multipliers(
    dataset: &Dataset,
    optima: Option<&[Option<i64>]>,
    mut predict: impl FnMut(&Instance, &PartialAssignment) -> Result<Multipliers, TrainError>,
) -> Result<Evaluation, TrainError> {
    let mut bounds = Vec::with_capacity(dataset.len());
    for k in 0..dataset.len() {
        let (instance, partial) = dataset.entry(k);
        let mu = predict(instance, partial)?;
        bounds.push(evaluate_bound(instance, partial, &mu)?.bound);
    }
    let mean_bound = bounds.iter().sum::<f64>() / bounds.len() as f64;
    let mean_gap_percent = optima.and_then(|opt| {
        let gaps: Option<Vec<f64>> = bounds
            .iter()
            .zip(opt)
            .map(|(&b, o)| o.map(|o| gap_percent(b, o)))
            .collect();
        gaps.map(|g| g.iter().sum::<f64>() / g.len() as f64)
    });
    Ok(Evaluation {
        bounds,
        mean_bound,
        mean_gap_percent,
    })
}

pub fn predict(params: &GnnParams, instance: &Instance, partial: &PartialAssignment) -> Result<Multipliers, TrainError> {
    let graph = encode(instance, partial)?;
    Ok(gnn_forward(params, &graph)?.mu)
}

/// Model bounds against precomputed optima.
pub fn evaluate_against(
    params: &GnnParams,
    dataset: &Dataset,
    optima: Option<&[Option<i64>]>,
) -> Result<Evaluation, TrainError> {
    evaluate_multipliers(dataset, optima, |inst, partial| predict(params, inst, partial))
}

/// Mean model bound and mean gap to optima found by branch-and-bound.
pub fn evaluate(params: &GnnParams, dataset: &Dataset) -> Result<Evaluation, TrainError> {
    let optima = compute_optima(dataset, GAP_NODE_BUDGET)?;
    evaluate_against(params, dataset, Some(&optima))
}
