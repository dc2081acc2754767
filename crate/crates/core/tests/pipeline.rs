mod common;

use ldbound::instances::{generate_mkp, generate_ssp, Family, MkpParams, PartialAssignment, SspParams};
use ldbound::lagrangian::evaluate_bound;
use ldbound::neural::{load_model, save_model, GnnParams};
use ldbound::solver::{solve, BoundingMode, SolveOptions, Status};
use ldbound::training::{
    arch_for, compute_optima, evaluate_against, predict, train, train_with, Dataset, TrainConfig,
};
use ldbound::Instance;

fn mkp(seeds: std::ops::Range<u64>, n: usize) -> Vec<Instance> {
    seeds
        .map(|s| generate_mkp(MkpParams { n, d: 3, tightness: 0.5 }, s).unwrap().into())
        .collect()
}

#[test]
fn training_bounds_stay_valid_and_improve() {
    let data = Dataset::augmented(mkp(0..8, 7), 3, 3, 5).unwrap();
    let optima: Vec<i64> = (0..data.len())
        .map(|k| {
            let (inst, partial) = data.entry(k);
            common::optimum(inst, partial).unwrap()
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 120,
        checkpoint_every: 20,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut checks = 0;
    let out = train_with(&data, &cfg, |_, params, _| {
        for k in 0..data.len() {
            let (inst, partial) = data.entry(k);
            let mu = predict(params, inst, partial)?;
            let bound = evaluate_bound(inst, partial, &mu)?.bound;
            assert!(bound >= optima[k] as f64 - 1e-9);
            checks += 1;
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(checks, 6 * data.len());
    assert_eq!(out.optimizer_steps, 120);
    assert_eq!(out.skipped_samples, 0);

    let known: Vec<Option<i64>> = optima.iter().map(|&o| Some(o)).collect();
    let before = evaluate_against(&GnnParams::init(&arch_for(Family::Mkp), 3), &data, Some(&known)).unwrap();
    let after = evaluate_against(&out.params, &data, Some(&known)).unwrap();
    assert!(after.mean_bound < before.mean_bound);
    assert!(after.mean_gap_percent.unwrap() < before.mean_gap_percent.unwrap());
}

#[test]
fn saved_models_predict_identically() {
    let data = Dataset::from_instances(mkp(20..23, 6)).unwrap();
    let out = train(&data, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&out.params, &out.meta, &path).unwrap();
    let (params, meta) = load_model(&path).unwrap();
    assert_eq!(meta, out.meta);
    let (inst, partial) = data.entry(1);
    assert_eq!(predict(&params, inst, partial).unwrap(), predict(&out.params, inst, partial).unwrap());
}

#[test]
fn learned_modes_solve_both_families() {
    let mkp_data = Dataset::from_instances(mkp(40..44, 9)).unwrap();
    let ssp: Vec<Instance> = (0..4)
        .map(|s| {
            generate_ssp(SspParams { periods: 5, activities: 3, states: 4, ..SspParams::default() }, s)
                .unwrap()
                .into()
        })
        .collect();
    let ssp_data = Dataset::from_instances(ssp).unwrap();
    for data in [mkp_data, ssp_data] {
        let model = train(&data, &TrainConfig { epochs: 10, ..TrainConfig::default() }).unwrap().params;
        let optima = compute_optima(&data, 100_000).unwrap();
        for (k, inst) in data.instances().iter().enumerate() {
            let expected = common::optimum(inst, &PartialAssignment::empty(inst.variable_count()));
            assert_eq!(optima[k], expected);
            for mode in BoundingMode::ALL {
                let r = solve(inst, Some(&model), &SolveOptions::new(inst, mode)).unwrap();
                assert_eq!(r.status, Status::Optimal);
                assert_eq!(r.objective, expected, "{mode}");
                if mode == BoundingMode::CpLearnAll || mode == BoundingMode::Cp {
                    assert_eq!(r.sg_iterations, 0);
                }
            }
        }
    }
}
