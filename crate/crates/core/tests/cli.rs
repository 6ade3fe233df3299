use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stale_lab::config::RunConfig;
use stale_lab::harness::presets::{quadratic_task, run_config};
use stale_lab::harness::{mean_std, read_result, summarize_results, SweepSpec};
use stale_lab::optim::Method;
use stale_lab::simulator::{run_experiment, DelaySchedule};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stale-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn minimal_config(rounds: u64) -> RunConfig {
    run_config(quadratic_task(), Method::Adam, DelaySchedule::Fixed { tau: 0 }, 1, rounds)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn json_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

#[test]
fn run_is_idempotent_and_trains() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(tmp.path(), "cfg.json", &minimal_config(60));
    let out = tmp.path().join("out");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let files = json_files(&out);
    assert_eq!(files.len(), 1);
    let bytes = fs::read(&files[0]).unwrap();
    let second = run(&args);
    assert!(second.status.success());
    assert_eq!(fs::read(&files[0]).unwrap(), bytes);

    let r = read_result(&files[0]).unwrap();
    assert!(r.final_loss.is_finite() && r.final_loss < r.initial_loss);
    assert!(!r.diverged);
    let name = files[0].file_name().unwrap().to_str().unwrap();
    assert_eq!(name, format!("{}_s1.json", r.config_hash));
}

#[test]
fn seed_override_changes_the_file_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_json(tmp.path(), "cfg.json", &minimal_config(5));
    let out = tmp.path().join("out");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed-override",
        "42",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files = json_files(&out);
    assert!(files[0].to_str().unwrap().ends_with("_s42.json"));
    assert_eq!(read_result(&files[0]).unwrap().seed, 42);
}

#[test]
fn invalid_beta_is_reported_by_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut value = serde_json::to_value(minimal_config(5)).unwrap();
    value["outer"]["beta1"] = serde_json::json!(1.0);
    let cfg = write_json(tmp.path(), "bad.json", &value);
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("outer.beta1"), "{}", stderr(&o));
    assert!(json_files(tmp.path()).iter().all(|p| p.ends_with("bad.json")));
}

#[test]
fn divergence_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = run_config(quadratic_task(), Method::Nesterov, DelaySchedule::Fixed { tau: 4 }, 1, 40);
    cfg.outer.eta = Some(500.0);
    let path = write_json(tmp.path(), "cfg.json", &cfg);
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read_result(&json_files(&out)[0]).unwrap().diverged);
}

fn sweep_spec() -> SweepSpec {
    let base = run_config(quadratic_task(), Method::Cgad, DelaySchedule::Fixed { tau: 0 }, 0, 20);
    let text = serde_json::json!({
        "version": 1,
        "base": base,
        "methods": ["cgad", "nesterov"],
        "delays": [{"kind": "fixed", "tau": 0}, {"kind": "fixed", "tau": 4}],
        "seeds": [1, 2, 3],
        "jobs": 2
    });
    SweepSpec::from_json(&text.to_string()).unwrap()
}

#[test]
fn sweep_writes_cells_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = sweep_spec();
    assert_eq!(spec.cell_count(), 12);
    let path = write_json(tmp.path(), "sweep.json", &spec);
    let out = tmp.path().join("out");
    let args = ["sweep", "--sweep", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("12 cells: 12 ran, 0 already present, 0 failed"), "{}", stdout(&o));
    let files = json_files(&out);
    assert_eq!(files.len(), 12);

    let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let table = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(table.contains("nesterov") && table.contains("tau=4"));

    // summary is a pure function of the stored results
    let stored: Vec<_> = files.iter().map(|p| read_result(p).unwrap()).collect();
    let mut rebuilt = summarize_results(&stored, &[]);
    let order = ["cgad", "nesterov"];
    rebuilt.rows.sort_by_key(|r| (order.iter().position(|m| *m == r.method), r.schedule.clone()));
    assert_eq!(rebuilt.to_csv(), csv);

    let victim = files[5].clone();
    let kept = fs::read(&files[0]).unwrap();
    fs::remove_file(&victim).unwrap();
    let o = run(&args);
    assert!(stdout(&o).contains("12 cells: 1 ran, 11 already present, 0 failed"), "{}", stdout(&o));
    assert!(victim.exists());
    assert_eq!(fs::read(&files[0]).unwrap(), kept);
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), csv);
}

#[test]
fn sweep_rejects_invalid_cells_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = sweep_spec();
    spec.etas = Some(vec![0.1, -1.0]);
    let path = write_json(tmp.path(), "sweep.json", &spec);
    let out = tmp.path().join("out");
    let o = run(&["sweep", "--sweep", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("outer.eta"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn summary_statistics_match_hand_values() {
    let base = run_experiment(&minimal_config(3)).unwrap();
    let mut results = Vec::new();
    for (seed, loss) in [(1, 0.5), (2, 0.25), (3, 1.0)] {
        let mut r = base.clone();
        r.seed = seed;
        r.final_loss = loss;
        r.diverged = seed == 2;
        results.push(r);
    }
    let s = summarize_results(&results, &[]);
    assert_eq!(s.rows.len(), 1);
    let row = &s.rows[0];
    assert_eq!(row.mean_final_loss, Some(0.5833333333333334));
    assert!((row.std_final_loss.unwrap() - 0.3818813079129867).abs() < 1e-15);
    // the flag is taken from the results, not re-derived from the loss
    assert_eq!(row.diverged, 1);
    assert_eq!(mean_std(&[0.5, 0.25, 1.0]).0, row.mean_final_loss);
    assert!(s.to_table().contains("diverged 1/3"));
}

#[test]
fn gate_table_prints_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("gate.csv");
    let o = run(&["gate-table", "--alpha", "0.2", "--tau-cut", "32", "--tau-max", "40", "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("1.839397"));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 41);
    assert_eq!(&rows[0][..5], &[0.0, 1.0, 1.0, 1.0, 0.0]);
    assert_eq!(rows[32][3], 0.0);
    assert!(rows.iter().all(|r| r[5] <= r[6]));

    let inf = run(&["gate-table", "--tau-cut", "inf", "--tau-max", "3"]);
    assert!(inf.status.success());
    let bad = run(&["gate-table", "--tau-cut", "-1"]);
    assert!(!bad.status.success());
}

#[test]
fn verify_passes() {
    let o = run(&["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn jobs_can_come_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = sweep_spec();
    spec.jobs = None;
    spec.seeds = vec![1];
    spec.methods = vec![Method::Cgad];
    let path = write_json(tmp.path(), "sweep.json", &spec);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["sweep", "--sweep", path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("STALE_LAB_JOBS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let bad = bin()
        .args(["sweep", "--sweep", path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("STALE_LAB_JOBS", "many")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
