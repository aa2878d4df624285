use std::fs;
use std::path::Path;
use std::process::Command as Process;

use qplab::config::ExperimentConfig;
use qplab::output::content_hash;
use qplab::{run, run_config, CliError, Command, RunOptions};
use qplab_core::models::{build_system, ParamMap};
use qplab_core::sde::{run_into, OccupationAccumulator, Simulation};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn config(v: Value) -> ExperimentConfig {
    serde_json::from_value(v).unwrap()
}

fn small_simulation() -> Value {
    json!({
        "schema_version": 1,
        "system": { "name": "example41" },
        "seed": 3,
        "simulate": {
            "epsilons": [0.2, 0.1], "step": 0.01, "horizon": 50.0, "replicas": 3,
            "grid": { "lower": [-3.5, -3.0], "upper": [2.5, 3.0], "bins": [60, 60] },
            "radii": [0.15, 0.3], "checkpoint_every": 1000
        }
    })
}

fn read_dir(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn assert_same_files(a: &Path, b: &Path) {
    let (fa, fb) = (read_dir(a), read_dir(b));
    let names = |f: &[(String, String)]| f.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    assert_eq!(names(&fa), names(&fb));
    let differing: Vec<&String> = fa.iter().zip(&fb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| &x.0).collect();
    assert!(differing.is_empty(), "files differ: {differing:?}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn identical_configs_give_identical_bytes() {
    let cfg = config(small_simulation());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_config(Command::Simulate, &cfg, a.path(), 1).unwrap();
    run_config(Command::Simulate, &cfg, b.path(), 4).unwrap();
    assert_same_files(a.path(), b.path());
    // checkpoints are gone once the replicas finish
    assert!(!a.path().join("checkpoints").exists());
}

#[test]
fn written_config_reproduces_the_run() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg_path = cfg_dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&small_simulation()).unwrap()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = |out: &Path, config: &Path| RunOptions { config: config.into(), out: out.into(), seed: None, threads: Some(2) };
    run(Command::Simulate, &opts(a.path(), &cfg_path)).unwrap();
    run(Command::Simulate, &opts(b.path(), &a.path().join("config.json"))).unwrap();
    assert_same_files(a.path(), b.path());
}

#[test]
fn seed_override_changes_results_and_is_recorded() {
    let cfg_dir = tempfile::tempdir().unwrap();
    let cfg_path = cfg_dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&small_simulation()).unwrap()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(Command::Simulate, &RunOptions { config: cfg_path.clone(), out: a.path().into(), seed: None, threads: None }).unwrap();
    run(Command::Simulate, &RunOptions { config: cfg_path, out: b.path().into(), seed: Some(99), threads: None }).unwrap();
    let (ma, mb) = (read_json(&a.path().join("neighborhood_mass.json")), read_json(&b.path().join("neighborhood_mass.json")));
    assert_eq!((ma["seed"].as_u64(), mb["seed"].as_u64()), (Some(3), Some(99)));
    assert_ne!(ma["entries"], mb["entries"]);
    assert_ne!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn every_output_carries_hash_and_seed_and_is_in_the_manifest() {
    let cfg = config(small_simulation());
    let out = tempfile::tempdir().unwrap();
    let summary = run_config(Command::Simulate, &cfg, out.path(), 0).unwrap();
    let canonical = fs::read(out.path().join("config.json")).unwrap();
    assert_eq!(summary.config_hash, content_hash(&canonical));
    // git blob framing, checked against an independent digest
    let mut framed = format!("blob {}\0", canonical.len()).into_bytes();
    framed.extend_from_slice(&canonical);
    let expect: String = Sha256::digest(&framed).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(summary.config_hash, expect);

    let manifest = read_json(&out.path().join("manifest.json"));
    let listed = manifest["files"].as_array().unwrap();
    assert_eq!(listed.len(), 3);
    for entry in listed {
        let name = entry["file"].as_str().unwrap();
        let bytes = fs::read(out.path().join(name)).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry["sha256"], digest.as_str(), "{name}");
        let text = String::from_utf8(bytes).unwrap();
        if name.ends_with(".csv") {
            assert_eq!(text.lines().next().unwrap(), format!("# config_hash={} seed=3", summary.config_hash));
        } else {
            let v: Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["config_hash"], summary.config_hash.as_str());
            assert_eq!(v["seed"], 3);
        }
    }
    assert_eq!(manifest["config_hash"], summary.config_hash.as_str());
}

#[test]
fn masses_are_probabilities_with_standard_errors() {
    let out = tempfile::tempdir().unwrap();
    run_config(Command::Simulate, &config(small_simulation()), out.path(), 0).unwrap();
    let table = read_json(&out.path().join("neighborhood_mass.json"));
    let entries = table["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2 * 4 * 2);
    for e in entries {
        let m = e["mean"].as_f64().unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&m), "{e}");
        assert!(e["std_error"].as_f64().unwrap() >= 0.0);
        assert_eq!(e["replicas"], 3);
    }
    // each occupation table sums to one minus the overflow
    for eps in ["0.2", "0.1"] {
        let text = fs::read_to_string(out.path().join(format!("occupation_eps{eps}.csv"))).unwrap();
        let total: f64 = text.lines().skip(2).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }
}

#[test]
fn interrupted_replica_resumes_to_the_same_bytes() {
    let cfg = config(small_simulation());
    let fresh = tempfile::tempdir().unwrap();
    run_config(Command::Simulate, &cfg, fresh.path(), 0).unwrap();

    // a checkpoint as an interrupted run leaves it: replica 1 of the second
    // epsilon stopped after 2000 steps
    let resumed = tempfile::tempdir().unwrap();
    let canonical = serde_json::to_string_pretty(&cfg).unwrap() + "\n";
    let sim_cfg = cfg.simulate.as_ref().unwrap().sim_config(0.1, 3);
    let sys = build_system("example41", &ParamMap::new()).unwrap();
    let mut sim = Simulation::new(&sys, &sim_cfg, &sys.default_initial_state(), 1).unwrap();
    let mut acc = OccupationAccumulator::new(cfg.simulate.as_ref().unwrap().grid.clone());
    run_into(&mut sim, &mut acc, 2000).unwrap();
    let ckpt = json!({
        "config_hash": content_hash(canonical.as_bytes()),
        "simulation": sim.checkpoint(),
        "accumulator": acc,
    });
    fs::create_dir_all(resumed.path().join("checkpoints")).unwrap();
    fs::write(resumed.path().join("checkpoints/eps1-replica1.json"), ckpt.to_string()).unwrap();

    run_config(Command::Simulate, &cfg, resumed.path(), 0).unwrap();
    assert_same_files(fresh.path(), resumed.path());
    assert!(!resumed.path().join("checkpoints").exists());
}

#[test]
fn stale_checkpoint_is_ignored() {
    let cfg = config(small_simulation());
    let fresh = tempfile::tempdir().unwrap();
    run_config(Command::Simulate, &cfg, fresh.path(), 0).unwrap();
    let stale = tempfile::tempdir().unwrap();
    fs::create_dir_all(stale.path().join("checkpoints")).unwrap();
    fs::write(stale.path().join("checkpoints/eps0-replica0.json"), r#"{"config_hash":"other"}"#).unwrap();
    run_config(Command::Simulate, &cfg, stale.path(), 0).unwrap();
    assert_same_files(fresh.path(), stale.path());
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut empty = small_simulation();
    empty["simulate"]["epsilons"] = json!([]);
    let out = tempfile::tempdir().unwrap();
    let err = run_config(Command::Simulate, &config(empty), out.path(), 0).unwrap_err();
    assert!(matches!(err, CliError::Config(ref m) if m.contains("epsilons")), "{err}");
    assert!(read_dir(out.path()).is_empty());

    let mut unknown = small_simulation();
    unknown["simulate"]["replicaz"] = json!(2);
    assert!(serde_json::from_value::<ExperimentConfig>(unknown).is_err());
    let mut top = small_simulation();
    top["output"] = json!("x");
    assert!(serde_json::from_value::<ExperimentConfig>(top).is_err());

    let mut version = small_simulation();
    version["schema_version"] = json!(2);
    assert!(matches!(run_config(Command::Simulate, &config(version), out.path(), 0), Err(CliError::Config(_))));

    let mut grid = small_simulation();
    grid["simulate"]["grid"]["bins"] = json!([10, 10, 10]);
    grid["simulate"]["grid"]["lower"] = json!([0, 0, 0]);
    grid["simulate"]["grid"]["upper"] = json!([1, 1, 1]);
    assert!(run_config(Command::Simulate, &config(grid), out.path(), 0).is_err());

    // a block for another command does not satisfy this one
    assert!(matches!(run_config(Command::ActionMin, &config(small_simulation()), out.path(), 0), Err(CliError::Config(_))));
}

#[test]
fn competition_parameter_gate() {
    let out = tempfile::tempdir().unwrap();
    let cfg = |s: f64| {
        config(json!({
            "schema_version": 1,
            "system": { "name": "mayleonard", "params": { "alpha": s / 2.0, "beta": s / 2.0 } },
            "verify": { "samples": 500 }
        }))
    };
    let ok = run_config(Command::Verify, &cfg(1.99), out.path(), 0).unwrap();
    assert!(!ok.failed, "{:?}", ok.problems);
    let err = run_config(Command::Verify, &cfg(2.01), out.path(), 0).unwrap_err();
    assert!(matches!(err, CliError::Model(_)), "{err}");
}

#[test]
fn verify_reports_and_filter() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "schema_version": 1,
        "system": { "name": "vdp" },
        "verify": { "samples": 2000, "checks": ["drift identity", "quartic"] }
    }));
    let s = run_config(Command::Verify, &cfg, out.path(), 0).unwrap();
    assert!(!s.failed);
    let reports = read_json(&out.path().join("verify.json"))["reports"].as_array().unwrap().clone();
    let names: Vec<&str> = reports.iter().map(|r| r["check"].as_str().unwrap()).collect();
    assert_eq!(names, ["drift identity", "quartic decay"]);
    // the identity holds to rounding: margin against a 1e-10 tolerance
    assert!(reports[0]["worst_margin"].as_f64().unwrap() > 0.0);
    let text = fs::read_to_string(out.path().join("verify.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 2);

    let bad = config(json!({ "schema_version": 1, "system": { "name": "vdp" }, "verify": { "checks": ["nonsense"] } }));
    assert!(matches!(run_config(Command::Verify, &bad, out.path(), 0), Err(CliError::Config(_))));
}

#[test]
fn failing_check_is_reported() {
    let out = tempfile::tempdir().unwrap();
    // decay outside the ball needs small noise
    let cfg = config(json!({
        "schema_version": 1,
        "system": { "name": "mayleonard" },
        "verify": { "samples": 1000, "eps": 0.5, "checks": ["decay outside ball"] }
    }));
    let s = run_config(Command::Verify, &cfg, out.path(), 0).unwrap();
    assert!(s.failed);
    assert_eq!(s.problems.len(), 1);
}

#[test]
fn replica_failures_are_collected_per_replica() {
    let out = tempfile::tempdir().unwrap();
    // Euler–Maruyama leaves the positive orthant at this noise level
    let cfg = config(json!({
        "schema_version": 1,
        "system": { "name": "mayleonard" },
        "simulate": {
            "epsilons": [4.0], "step": 0.1, "horizon": 200.0, "replicas": 4,
            "grid": { "lower": [0, 0, 0], "upper": [2, 2, 2], "bins": [10, 10, 10] },
            "radii": [0.1]
        }
    }));
    let s = run_config(Command::Simulate, &cfg, out.path(), 0).unwrap();
    assert!(s.failed);
    let table = read_json(&out.path().join("neighborhood_mass.json"));
    let failures = table["failures"].as_array().unwrap();
    assert_eq!(failures.len(), s.problems.len());
    assert!(!failures.is_empty());
    assert!(failures.iter().all(|f| f["error"].as_str().unwrap().contains("positive orthant")));
}

#[test]
fn analytic_matrices_of_both_examples() {
    let out = tempfile::tempdir().unwrap();
    let expected = [
        (
            "example41",
            [
                [0.0, 0.0, 1.0, 1.0],
                [25.0 / 9.0, 0.0, 1.0, 1.0],
                [55.0 / 16.0, 95.0 / 144.0, 0.0, 95.0 / 144.0],
                [25.0 / 9.0, 0.0, 0.0, 0.0],
            ],
        ),
        (
            "example42",
            [
                [0.0, 95.0 / 144.0, 95.0 / 144.0, 55.0 / 16.0],
                [1.0, 0.0, 1.0, 25.0 / 9.0],
                [0.0, 0.0, 0.0, 25.0 / 9.0],
                [1.0, 0.0, 1.0, 0.0],
            ],
        ),
    ];
    for (name, matrix) in expected {
        let cfg = config(json!({ "schema_version": 1, "system": { "name": name }, "quasipotential": { "method": "analytic" } }));
        run_config(Command::Quasipotential, &cfg, out.path(), 0).unwrap();
        let v = read_json(&out.path().join("quasipotential.json"));
        for (i, row) in matrix.iter().enumerate() {
            for (j, exact) in row.iter().enumerate() {
                assert!((v["V"][i][j].as_f64().unwrap() - exact).abs() < 1e-12, "{name} ({i},{j})");
            }
        }
        assert_eq!(v["analysis"]["minimizing_set"], json!(["K2"]));
    }
}

#[test]
fn analytic_method_needs_a_decomposable_model() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(json!({ "schema_version": 1, "system": { "name": "vdp" }, "quasipotential": { "method": "analytic" } }));
    assert!(matches!(run_config(Command::Quasipotential, &cfg, out.path(), 0), Err(CliError::Config(_))));
}

#[test]
fn wgraph_from_file_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let graph = json!({
        "labels": ["A", "B", "C"],
        "V": [[0.0, 1.0, null], [2.0, 0.0, 0.5], [3.0, null, 0.0]]
    });
    fs::write(dir.path().join("graph.json"), graph.to_string()).unwrap();
    let cfg = json!({ "schema_version": 1, "system": { "name": "example41" }, "wgraph": { "source": "file", "file": "graph.json" } });
    fs::write(dir.path().join("cfg.json"), cfg.to_string()).unwrap();
    let out = dir.path().join("out");
    let opts = RunOptions { config: dir.path().join("cfg.json"), out: out.clone(), seed: None, threads: None };
    run(Command::WGraph, &opts).unwrap();
    let w = read_json(&out.join("wgraph.json"));
    // {A}-graphs: B→A, C→A costs 5; B→C, C→A costs 3.5
    // {B}-graphs: A→B, C→A costs 4; {C}-graphs: A→B, B→C costs 1.5
    let values: Vec<f64> = w["analysis"]["classes"].as_array().unwrap().iter().map(|c| c["W"].as_f64().unwrap()).collect();
    assert_eq!(values, [3.5, 4.0, 1.5]);
    assert_eq!(w["analysis"]["minimizing_set"], json!(["C"]));
    // Λ = 1.5 minus the cheapest two-sink graph (one arrow): 1.5 - 0.5
    assert_eq!(w["analysis"]["lambda"], 1.0);
}

#[test]
fn action_min_writes_path_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(json!({
        "schema_version": 1,
        "system": { "name": "example41" },
        "action": { "from": [1.0, 0.0], "to": [0.0, 0.0], "nodes": 100, "durations": [4.0, 8.0, 16.0] }
    }));
    run_config(Command::ActionMin, &cfg, out.path(), 0).unwrap();
    let a = read_json(&out.path().join("action.json"));
    let value = a["value"].as_f64().unwrap();
    assert!((value - 95.0 / 144.0).abs() < 0.1 * 95.0 / 144.0, "{value}");
    assert_eq!(a["per_duration"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(out.path().join("path.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "t,x1,x2");
    assert_eq!(lines.count(), 102);
}

#[test]
fn numeric_matrix_is_close_to_the_analytic_one() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(json!({ "schema_version": 1, "system": { "name": "example41" }, "quasipotential": { "method": "numeric" } }));
    let s = run_config(Command::Quasipotential, &cfg, out.path(), 0).unwrap();
    assert!(!s.failed, "{:?}", s.problems);
    let v = read_json(&out.path().join("quasipotential.json"));
    let exact = [
        [0.0, 0.0, 1.0, 1.0],
        [25.0 / 9.0, 0.0, 1.0, 1.0],
        [55.0 / 16.0, 95.0 / 144.0, 0.0, 95.0 / 144.0],
        [25.0 / 9.0, 0.0, 0.0, 0.0],
    ];
    for (i, row) in exact.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let got = v["V"][i][j].as_f64().unwrap();
            // zero entries are reached along the flow; allow the discretization floor
            let tol = if *e == 0.0 { 2e-2 } else { 0.1 * e };
            assert!((got - e).abs() <= tol, "({i},{j}): {got} vs {e}");
        }
    }
    assert_eq!(v["entries"].as_array().unwrap().len(), 12);
    assert_eq!(v["analysis"]["minimizing_set"], json!(["K2"]));
}

fn binary(args: &[&str], env: Option<(&str, &str)>) -> i32 {
    let mut cmd = Process::new(env!("CARGO_BIN_EXE_qplab"));
    cmd.args(args);
    if let Some((k, v)) = env {
        cmd.env(k, v);
    }
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, v: Value| {
        let p = dir.path().join(name);
        fs::write(&p, v.to_string()).unwrap();
        p.to_string_lossy().into_owned()
    };
    let good = write("good.json", json!({ "schema_version": 1, "system": { "name": "example41" }, "quasipotential": { "method": "analytic" } }));
    let failing = write(
        "failing.json",
        json!({ "schema_version": 1, "system": { "name": "mayleonard" }, "verify": { "samples": 500, "eps": 0.5, "checks": ["decay outside"] } }),
    );
    let out = dir.path().join("out").to_string_lossy().into_owned();
    assert_eq!(binary(&["quasipotential", "--config", &good, "--out", &out], None), 0);
    assert_eq!(binary(&["verify", "--config", &failing, "--out", &out], None), 1);
    assert_eq!(binary(&["simulate", "--config", &good, "--out", &out], None), 2);
    assert_eq!(binary(&["quasipotential", "--config", &good, "--out", &out], Some(("QPLAB_THREADS", "many"))), 2);
    assert_eq!(binary(&["quasipotential", "--config", &good, "--out", &out, "--threads", "2"], Some(("QPLAB_THREADS", "1"))), 0);
}
