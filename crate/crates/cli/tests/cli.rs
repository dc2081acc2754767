use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ldbound::instances::{write_instance, Automaton, MkpInstance, SspInstance};
use ldbound::Instance;

fn ldbound(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ldbound")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny(dir: &Path) -> PathBuf {
    let inst: Instance = MkpInstance::new(vec![3, 4], vec![vec![2, 3], vec![3, 3]], vec![5, 3]).unwrap().into();
    let path = dir.join("tiny.json");
    write_instance(&inst, &path).unwrap();
    path
}

fn infeasible_ssp(dir: &Path) -> PathBuf {
    // Only "aa" is accepted, but there are three periods.
    let aa = Automaton::new(3, 2, &[(0, 0, 1), (1, 0, 2)], 0, &[2]).unwrap();
    let inst: Instance = SspInstance::new(3, 2, vec![aa.clone(), aa], vec![vec![1; 3], vec![1; 3]]).unwrap().into();
    let path = dir.join("empty.json");
    write_instance(&inst, &path).unwrap();
    path
}

/// CSV body without comment lines and without the named columns.
fn strip_columns(csv: &str, drop: &[&str]) -> Vec<String> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !drop.contains(&header[i])).collect();
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cells[i]).collect::<Vec<_>>().join(",")
        }))
        .collect()
}

#[test]
fn generate_writes_seeded_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let (code, _, _) = ldbound(&["generate", "--family", "mkp", "--count", "3", "--seed", "7", "--out", p(out), "--n", "8"]);
        assert_eq!(code, 0);
    }
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["mkp_7.json", "mkp_8.json", "mkp_9.json"]);
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }

    let (code, _, _) = ldbound(&["generate", "--family", "ssp", "--out", p(&a)]);
    assert_eq!(code, 0);
    let Instance::Ssp(s) = ldbound::instances::read_instance(a.join("ssp_0.json")).unwrap() else { panic!() };
    assert_eq!((s.periods(), s.activities(), s.automata().len()), (50, 10, 2));

    let (code, _, _) = ldbound(&["generate", "--family", "mkp", "--tightness", "2", "--out", p(&a)]);
    assert_eq!(code, 2);
}

#[test]
fn train_writes_model_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    tiny(&data);
    let m1 = dir.path().join("m1.bin");
    let m2 = dir.path().join("m2.bin");
    for m in [&m1, &m2] {
        let (code, _, err) = ldbound(&["train", "--data", p(&data), "--out", p(m), "--epochs", "1", "--seed", "3"]);
        assert_eq!(code, 0, "{err}");
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let history = fs::read_to_string(m1.with_extension("csv")).unwrap();
    assert!(history.starts_with("# ldbound train-history v1"));
    assert_eq!(strip_columns(&history, &[]).len(), 2);

    let tuned = dir.path().join("tuned.bin");
    let (code, _, _) = ldbound(&[
        "train", "--data", p(&data), "--out", p(&tuned), "--epochs", "2", "--init-model", p(&m1),
        "--checkpoint-every", "1",
    ]);
    assert_eq!(code, 0);
    let (_, meta) = ldbound::neural::load_model(&tuned).unwrap();
    assert_eq!(meta.epochs, 3);
    assert!(tuned.with_extension("epoch1.bin").exists());

    let ssp_data = dir.path().join("ssp");
    fs::create_dir(&ssp_data).unwrap();
    let (code, _, _) = ldbound(&["generate", "--family", "ssp", "--periods", "4", "--out", p(&ssp_data)]);
    assert_eq!(code, 0);
    let (code, _, err) = ldbound(&["train", "--data", p(&ssp_data), "--out", p(&tuned), "--init-model", p(&m1)]);
    assert_eq!(code, 1);
    assert!(err.contains("mkp"), "{err}");
}

#[test]
fn bound_traces() {
    let dir = tempfile::tempdir().unwrap();
    let inst = tiny(dir.path());
    let (code, out, _) = ldbound(&["bound", "--instance", p(&inst), "--mu", "zero"]);
    assert_eq!(code, 0);
    assert_eq!(strip_columns(&out, &[]), ["iteration,bound,best_bound,status", "0,7,7,ok"]);

    let (code, out, _) = ldbound(&["bound", "--instance", p(&inst), "--mu", "sg", "--sg-iters", "30", "--sg-alpha0", "1"]);
    assert_eq!(code, 0);
    let rows = strip_columns(&out, &[]);
    assert_eq!(rows.len(), 32);
    let mut running = f64::INFINITY;
    for row in &rows[1..] {
        let cells: Vec<f64> = row.split(',').take(3).map(|c| c.parse().unwrap()).collect();
        running = running.min(cells[1]);
        assert_eq!(cells[2], running);
        assert!(cells[1] >= 4.0 - 1e-9);
    }

    let (code, _, _) = ldbound(&["bound", "--instance", p(&inst), "--mu", "model"]);
    assert_eq!(code, 2);

    let empty = infeasible_ssp(dir.path());
    let (code, out, _) = ldbound(&["bound", "--instance", p(&empty)]);
    assert_eq!(code, 3);
    assert!(out.lines().last().unwrap().ends_with("infeasible"));
}

#[test]
fn solve_exit_codes_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let inst = tiny(dir.path());
    let (code, out, _) = ldbound(&["solve", "--instance", p(&inst), "--mode", "cp"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["result"]["objective"], 4);
    assert_eq!(v["result"]["status"], "Optimal");

    let (code, _, err) = ldbound(&["solve", "--instance", p(&inst), "--mode", "cp+learn-all"]);
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = ldbound(&["solve", "--instance", p(&inst), "--mode", "cp+nothing"]);
    assert_eq!(code, 2);

    let gen = dir.path().join("gen");
    ldbound(&["generate", "--family", "mkp", "--n", "15", "--out", p(&gen)]);
    let (code, out, _) = ldbound(&["solve", "--instance", p(&gen.join("mkp_0.json")), "--max-nodes", "1"]);
    assert_eq!(code, 4);
    assert!(out.contains("\"TimedOut\""));

    let (code, _, _) = ldbound(&["solve", "--instance", p(&infeasible_ssp(dir.path())), "--mode", "cp+sg"]);
    assert_eq!(code, 3);
}

#[test]
fn bench_rows_summary_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ldbound(&["generate", "--family", "mkp", "--count", "2", "--n", "10", "--d", "3", "--out", p(&data)]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let (code, _, err) = ldbound(&["bench", "--instances", p(&data), "--mode", "cp,cp+sg", "--out", p(&out)]);
        assert_eq!(code, 0, "{err}");
        fs::read_to_string(out).unwrap()
    };
    let first = run("a.csv");
    let second = run("b.csv");
    assert!(first.starts_with("# ldbound bench v1; nondeterministic columns: time_seconds mean_time_seconds"));
    let rows = strip_columns(&first, &["time_seconds"]);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows, strip_columns(&second, &["time_seconds"]));
    let summary: Vec<&str> = first.lines().filter(|l| l.starts_with("# summary,")).collect();
    assert_eq!(summary.len(), 3);
    assert!(summary[1].starts_with("# summary,cp,2,2,2,"));
    // Same optimum from both modes.
    let objectives: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(3).unwrap()).collect();
    assert_eq!(objectives[0], objectives[1]);
    assert_eq!(objectives[2], objectives[3]);
}

#[test]
fn bench_records_bad_files_as_rows() {
    let dir = tempfile::tempdir().unwrap();
    tiny(dir.path());
    fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let (code, out, _) = ldbound(&["bench", "--instances", p(dir.path()), "--mode", "cp"]);
    assert_eq!(code, 0);
    let rows = strip_columns(&out, &[]);
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("broken,cp,Error"));
    assert!(rows[2].starts_with("tiny,cp,Optimal,4"));
    assert!(out.contains("# summary,cp,1,2,1,"));
}
