use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use ldbound::instances::{
    generate_mkp, generate_ssp, read_instance, write_instance, Family, InstanceError, MkpParams, SspParams,
};
use ldbound::lagrangian::{evaluate_bound, optimize_multipliers, LagrangianError};
use ldbound::neural::{load_model, save_model, GnnParams, NeuralError};
use ldbound::solver::{solve, BoundingMode, SolveLimits, SolveOptions, SolveResult, Status};
use ldbound::training::{self, gap_percent, Dataset, TrainConfig, TrainError};
use ldbound::{Instance, Multipliers, PartialAssignment, SubgradientConfig};

use crate::output::{emit, field, opt, schema_line};
use crate::{
    BenchArgs, BoundArgs, CliError, GenerateArgs, LimitArgs, MuSource, Outcome, SgArgs, SolveArgs, TrainArgs,
};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl SgArgs {
    fn apply(&self, base: SubgradientConfig) -> Result<SubgradientConfig, CliError> {
        let cfg = SubgradientConfig {
            iterations: self.sg_iters.unwrap_or(base.iterations),
            alpha0: self.sg_alpha0.unwrap_or(base.alpha0),
            decay: self.sg_decay.unwrap_or(base.decay),
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

impl LimitArgs {
    fn limits(&self) -> Result<SolveLimits, CliError> {
        let time = match self.time_limit {
            Some(t) if t.is_finite() && t >= 0.0 => Some(Duration::from_secs_f64(t)),
            Some(t) => return Err(usage(format!("--time-limit {t} must be a non-negative number"))),
            None => None,
        };
        Ok(SolveLimits {
            time,
            max_nodes: self.max_nodes,
        })
    }
}

fn load(path: &Path) -> Result<Instance, CliError> {
    read_instance(path)
        .with_context(|| format!("reading instance {}", path.display()))
        .map_err(CliError::Failed)
}

fn load_model_for(path: &Path, family: Family) -> Result<GnnParams, CliError> {
    let (params, meta) = load_model(path).with_context(|| format!("loading model {}", path.display()))?;
    if meta.family != family {
        return Err(CliError::Failed(anyhow!(NeuralError::FamilyMismatch {
            model: meta.family,
            graph: family,
        })));
    }
    Ok(params)
}

/// Instance files of `dir` in file-name order, identified by file stem.
fn instance_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("listing {}", dir.display()))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let known = matches!(path.extension().and_then(|e| e.to_str()), Some("json" | "txt" | "dat"));
        if path.is_file() && known && !name.starts_with('.') {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(&name).to_string();
            files.push((stem, path));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(usage(format!("no instance files in {}", dir.display())));
    }
    Ok(files)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut written = Vec::new();
    for k in 0..a.count {
        let seed = a.seed.checked_add(k).ok_or_else(|| usage("seed range overflows"))?;
        let instance: Result<Instance, InstanceError> = match a.family {
            Family::Mkp => generate_mkp(
                MkpParams {
                    n: a.n,
                    d: a.d,
                    tightness: a.tightness,
                },
                seed,
            )
            .map(Into::into),
            Family::Ssp => generate_ssp(
                SspParams {
                    periods: a.periods,
                    activities: a.activities,
                    states: a.states,
                    constraints: a.constraints,
                    undef_fraction: a.undef_fraction,
                    final_fraction: a.final_fraction,
                    ..SspParams::default()
                },
                seed,
            )
            .map(Into::into),
        };
        let instance = match instance {
            Err(InstanceError::InvalidParameter(msg)) => return Err(usage(msg)),
            other => other.context("generating instance")?,
        };
        let path = a.out.join(format!("{}_{seed}.json", a.family));
        write_instance(&instance, &path).context("writing instance")?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub history: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub optimizer_steps: usize,
    pub skipped_samples: usize,
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(msg) => usage(msg),
        other => CliError::Failed(other.into()),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary, CliError> {
    let instances = instance_files(&a.data)?
        .iter()
        .map(|(_, path)| load(path))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = Dataset::augmented(instances, a.depth, a.augment, a.seed).map_err(train_error)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        augmentation_depth: a.depth,
        batch_size: a.batch_size,
        checkpoint_every: a.checkpoint_every,
        init_model: a.init_model.clone(),
    };
    let mut checkpoints = Vec::new();
    let outcome = training::train_with(&dataset, &cfg, |epoch, params, meta| {
        let path = a.out.with_extension(format!("epoch{epoch}.bin"));
        save_model(params, meta, &path)?;
        checkpoints.push(path);
        Ok(())
    })
    .map_err(train_error)?;
    save_model(&outcome.params, &outcome.meta, &a.out).context("writing model")?;

    let history = a.history.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let mut csv = schema_line("train-history", &["wallclock_seconds"]);
    csv.push_str("epoch,samples,mean_bound,wallclock_seconds\n");
    for rec in &outcome.history {
        let samples: Vec<String> = rec.samples.iter().map(|s| s.to_string()).collect();
        writeln!(
            csv,
            "{},{},{},{}",
            rec.epoch,
            samples.join(";"),
            opt(rec.mean_bound),
            rec.wallclock_seconds
        )
        .expect("string write");
    }
    emit(Some(&history), &csv)?;
    if outcome.skipped_samples > 0 {
        log::warn!("{} infeasible samples skipped", outcome.skipped_samples);
    }
    Ok(TrainSummary {
        model: a.out.clone(),
        history,
        checkpoints,
        optimizer_steps: outcome.optimizer_steps,
        skipped_samples: outcome.skipped_samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub iteration: usize,
    pub bound: Option<f64>,
    pub best_bound: Option<f64>,
    pub status: &'static str,
}

pub fn cmd_bound(a: &BoundArgs) -> Result<(Vec<BoundRow>, Outcome), CliError> {
    let instance = load(&a.instance)?;
    let partial = PartialAssignment::empty(instance.variable_count());
    let uses_model = matches!(a.source, MuSource::Model | MuSource::ModelSg);
    let model = match (&a.model, uses_model) {
        (Some(path), true) => Some(load_model_for(path, instance.family())?),
        (None, true) => return Err(usage("--mu model and model+sg need --model")),
        _ => None,
    };
    let cfg = a.sg.apply(SubgradientConfig::default_for(&instance))?;
    let mu0 = match &model {
        Some(params) => training::predict(params, &instance, &partial).map_err(train_error)?,
        None => Multipliers::for_instance(&instance),
    };

    let result = match a.source {
        MuSource::Zero | MuSource::Model => evaluate_bound(&instance, &partial, &mu0).map(|r| vec![r.bound]),
        MuSource::Sg | MuSource::ModelSg => {
            optimize_multipliers(&instance, &partial, &mu0, &cfg).map(|o| o.trace)
        }
    };
    let (rows, outcome) = match result {
        Ok(trace) => {
            let mut best = f64::INFINITY;
            let rows = trace
                .into_iter()
                .enumerate()
                .map(|(t, b)| {
                    best = best.min(b);
                    BoundRow {
                        iteration: t,
                        bound: Some(b),
                        best_bound: Some(best),
                        status: "ok",
                    }
                })
                .collect();
            (rows, Outcome::Success)
        }
        Err(LagrangianError::Infeasible { .. }) => (
            vec![BoundRow {
                iteration: 0,
                bound: None,
                best_bound: None,
                status: "infeasible",
            }],
            Outcome::Infeasible,
        ),
        Err(e) => return Err(CliError::Failed(e.into())),
    };

    let mut csv = schema_line("bound", &[]);
    csv.push_str("iteration,bound,best_bound,status\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.iteration, opt(r.bound), opt(r.best_bound), r.status).expect("string write");
    }
    emit(a.out.as_deref(), &csv)?;
    Ok((rows, outcome))
}

fn solve_options(
    instance: &Instance,
    mode: BoundingMode,
    limits: &LimitArgs,
    sg: &SgArgs,
) -> Result<SolveOptions, CliError> {
    let mut opts = SolveOptions::new(instance, mode);
    opts.limits = limits.limits()?;
    opts.sg = sg.apply(opts.sg)?;
    Ok(opts)
}

fn status_outcome(status: Status) -> Outcome {
    match status {
        Status::Optimal => Outcome::Success,
        Status::Infeasible => Outcome::Infeasible,
        Status::TimedOut => Outcome::LimitHit,
    }
}

pub fn cmd_solve(a: &SolveArgs) -> Result<(SolveResult, Outcome), CliError> {
    let instance = load(&a.instance)?;
    let model = match (&a.model, a.mode.needs_model()) {
        (Some(path), true) => Some(load_model_for(path, instance.family())?),
        (None, true) => return Err(usage(format!("mode {} needs --model", a.mode))),
        _ => None,
    };
    let opts = solve_options(&instance, a.mode, &a.limits, &a.sg)?;
    let result = solve(&instance, model.as_ref(), &opts).context("solving")?;
    let json = serde_json::json!({
        "instance": a.instance.display().to_string(),
        "mode": a.mode.name(),
        "result": result,
    });
    let text = format!("{json}\n");
    emit(None, &text)?;
    if let Some(path) = &a.out {
        emit(Some(path), &text)?;
    }
    let outcome = status_outcome(result.status);
    Ok((result, outcome))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub instance: String,
    pub mode: BoundingMode,
    pub status: String,
    pub objective: Option<i64>,
    pub nodes: Option<u64>,
    pub sg_iterations: Option<u64>,
    pub time_seconds: Option<f64>,
    pub root_bound: Option<f64>,
    pub root_gap_percent: Option<f64>,
}

impl BenchRow {
    fn failed(instance: &str, mode: BoundingMode, why: &str) -> Self {
        log::warn!("{instance} / {mode}: {why}");
        Self {
            instance: instance.to_string(),
            mode,
            status: "Error".into(),
            objective: None,
            nodes: None,
            sg_iterations: None,
            time_seconds: None,
            root_bound: None,
            root_gap_percent: None,
        }
    }

    fn solved(&self) -> bool {
        self.status == Status::Optimal.to_string()
    }
}

pub fn cmd_bench(a: &BenchArgs) -> Result<Vec<BenchRow>, CliError> {
    if a.modes.is_empty() {
        return Err(usage("no modes given"));
    }
    let needs_model = a.modes.iter().any(|m| m.needs_model());
    if needs_model && a.model.is_none() {
        return Err(usage("learned modes need --model"));
    }
    let files = instance_files(&a.instances)?;
    let mut family = None;
    let mut model = None;
    let mut rows = Vec::new();
    for (id, path) in &files {
        let instance = match read_instance(path) {
            Ok(i) => i,
            Err(e) => {
                rows.extend(a.modes.iter().map(|&m| BenchRow::failed(id, m, &e.to_string())));
                continue;
            }
        };
        let fam = *family.get_or_insert(instance.family());
        if fam != instance.family() {
            let why = format!("{} instance in a {fam} benchmark", instance.family());
            rows.extend(a.modes.iter().map(|&m| BenchRow::failed(id, m, &why)));
            continue;
        }
        if needs_model && model.is_none() {
            let path = a.model.as_ref().expect("checked above");
            model = Some(load_model_for(path, fam)?);
        }
        let first = rows.len();
        for &mode in &a.modes {
            let outcome = solve_options(&instance, mode, &a.limits, &a.sg)
                .and_then(|opts| solve(&instance, model.as_ref(), &opts).map_err(|e| CliError::Failed(e.into())));
            rows.push(match outcome {
                Ok(r) => BenchRow {
                    instance: id.clone(),
                    mode,
                    status: r.status.to_string(),
                    objective: r.objective,
                    nodes: Some(r.nodes),
                    sg_iterations: Some(r.sg_iterations),
                    time_seconds: Some(r.wallclock_seconds),
                    root_bound: r.root_bound,
                    root_gap_percent: None,
                },
                Err(CliError::Usage(msg)) => return Err(CliError::Usage(msg)),
                Err(e) => BenchRow::failed(id, mode, &e.to_string()),
            });
        }
        let optimum = rows[first..].iter().filter(|r| r.solved()).filter_map(|r| r.objective).max();
        if let Some(opt) = optimum {
            for r in &mut rows[first..] {
                r.root_gap_percent = r.root_bound.map(|b| gap_percent(b, opt));
            }
        }
    }

    let mut csv = schema_line("bench", &["time_seconds", "mean_time_seconds"]);
    csv.push_str("instance,mode,status,objective,nodes,sg_iterations,time_seconds,root_bound,root_gap_percent\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            field(&r.instance),
            r.mode,
            r.status,
            opt(r.objective),
            opt(r.nodes),
            opt(r.sg_iterations),
            opt(r.time_seconds),
            opt(r.root_bound),
            opt(r.root_gap_percent)
        )
        .expect("string write");
    }
    csv.push_str(&summary(&rows, &a.modes));
    emit(a.out.as_deref(), &csv)?;
    Ok(rows)
}

/// Footer: per mode, solved count plus mean time and nodes over the
/// instances every mode solved.
fn summary(rows: &[BenchRow], modes: &[BoundingMode]) -> String {
    let instances: BTreeSet<&str> = rows.iter().map(|r| r.instance.as_str()).collect();
    let common: BTreeSet<&str> = instances
        .iter()
        .copied()
        .filter(|id| {
            modes
                .iter()
                .all(|&m| rows.iter().any(|r| r.instance == *id && r.mode == m && r.solved()))
        })
        .collect();
    let mut out = String::from("# summary,mode,solved,instances,common,mean_time_seconds,mean_nodes\n");
    for &mode in modes {
        let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.mode == mode).collect();
        let solved = mine.iter().filter(|r| r.solved()).count();
        let shared: Vec<&&BenchRow> = mine.iter().filter(|r| common.contains(r.instance.as_str())).collect();
        let mean = |f: &dyn Fn(&BenchRow) -> f64| {
            (!shared.is_empty()).then(|| shared.iter().map(|r| f(r)).sum::<f64>() / shared.len() as f64)
        };
        writeln!(
            out,
            "# summary,{mode},{solved},{},{},{},{}",
            instances.len(),
            common.len(),
            opt(mean(&|r| r.time_seconds.unwrap_or(0.0))),
            opt(mean(&|r| r.nodes.unwrap_or(0) as f64)),
        )
        .expect("string write");
    }
    out
}
