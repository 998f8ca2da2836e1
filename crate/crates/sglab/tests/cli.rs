use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sglab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sglab"))
        .args(args)
        .env_remove("SGLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

const EXPERIMENTS: [&str; 14] = [
    "blowup-probe",
    "chaos-regularity",
    "chaos-twopoint",
    "charge-bound",
    "cone-weighted-probe",
    "covariance-log-law",
    "invariance",
    "kernel-bounds",
    "leibniz-check",
    "picard-consistency",
    "sigma-scaling",
    "singular-integrals",
    "smoothing-moment",
    "variance-identity",
];

#[test]
fn list_is_sorted_and_complete() {
    let o = sglab(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let names: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with(' '))
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    assert_eq!(names, EXPERIMENTS);
    assert!(text.lines().all(|l| !l.trim().is_empty()));
}

#[test]
fn show_prints_a_valid_default_config() {
    for name in EXPERIMENTS {
        let o = sglab(&["show", name]);
        assert_eq!(o.status.code(), Some(0));
        let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["experiment"], name);
    }
    assert_eq!(sglab(&["show", "no-such-thing"]).status.code(), Some(1));
}

#[test]
fn sigma_scaling_runs_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = sglab(&["run", "sigma-scaling", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("sigma-scaling: PASS"));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sigma-scaling.json")).unwrap())
            .unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["schema_version"].is_number());
    let csv = std::fs::read_to_string(out.join("sigma-scaling.sigma.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("schema_version,"), "{header}");
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"experiment\": \"sigma-scaling\",\n  \"lattice\": {\"N\": [16, 32,]}\n}\n")
        .unwrap();
    let o = sglab(&["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_fields_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "typo.json",
        &json!({"experiment": "sigma-scaling", "lattice": {"N": [16, 32], "cutof": 3}}),
    );
    let o = sglab(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cutof"), "{}", stderr(&o));
    let cfg = write_config(
        dir.path(),
        "param.json",
        &json!({"experiment": "sigma-scaling", "params": {"slope_tol": 0.1}}),
    );
    let o = sglab(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("slope_tol"), "{}", stderr(&o));
    let cfg = write_config(
        dir.path(),
        "range.json",
        &json!({"experiment": "sigma-scaling", "lattice": {"N": [0.5, 32]}}),
    );
    let o = sglab(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lattice.N"), "{}", stderr(&o));
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    assert_eq!(sglab(&["run", "no-such-experiment"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "x.json", &json!({"experiment": "nope"}));
    let o = sglab(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown experiment"));
    assert_eq!(sglab(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn unwritable_output_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = blocker.join("sub");
    let o = sglab(&["run", "sigma-scaling", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn zero_threads_is_rejected() {
    let o = sglab(&["run", "sigma-scaling", "--threads", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_sglab"))
        .args(["run", "sigma-scaling"])
        .env("SGLAB_THREADS", "0")
        .current_dir(tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failing_threshold_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tight.json",
        &json!({
            "experiment": "sigma-scaling",
            "lattice": {"N": [2, 4]},
            "params": {"slope_rel_tol": 1e-6},
            "output": {"directory": dir.path().join("o").to_str().unwrap()}
        }),
    );
    let o = sglab(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn baseline_compare_detects_changes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, n: Value| {
        let out = dir.path().join(sub);
        let cfg = write_config(
            dir.path(),
            &format!("{sub}.json"),
            &json!({"experiment": "sigma-scaling", "lattice": {"N": n},
                    "output": {"directory": out.to_str().unwrap(), "formats": ["json"]}}),
        );
        let o = sglab(&["run", &cfg]);
        assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
        out.join("sigma-scaling.json")
    };
    let a = run("a", json!([16, 32, 64]));
    let b = run("b", json!([16, 32, 64]));
    let c = run("c", json!([16, 64]));
    let same = sglab(&["baseline", "compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(same.status.code(), Some(0), "{}", stdout(&same));
    let diff = sglab(&["baseline", "compare", a.to_str().unwrap(), c.to_str().unwrap()]);
    assert_eq!(diff.status.code(), Some(2), "{}", stdout(&diff));
    let missing = dir.path().join("missing.json");
    let o = sglab(&["baseline", "compare", a.to_str().unwrap(), missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

/// A heavily reduced config per experiment: every pipeline must run end to end
/// and produce a report (the verdict at these sizes is not meaningful).
fn tiny(name: &str) -> Value {
    match name {
        "blowup-probe" => json!({"lattice": {"N": [4, 8]}}),
        "chaos-regularity" => json!({"lattice": {"N": [8, 16]}, "mc": {"samples": 20},
                                      "params": {"oracle_cutoffs": [8, 16]}}),
        "chaos-twopoint" => json!({"lattice": {"N": 64}, "mc": {"samples": 100},
                                    "params": {"mc_cutoff": 4}}),
        "charge-bound" => json!({"mc": {"samples": 20}}),
        "cone-weighted-probe" => json!({"mc": {"samples": 3}, "time": {"window": 64.0},
                                         "params": {"time_points": 1024, "l_list": [0.25, 0.5, 1.0]}}),
        "covariance-log-law" => json!({"lattice": {"N": [8, 16]}}),
        "invariance" => json!({"lattice": {"N": 4}, "mc": {"samples": 50}, "time": {"horizon": 0.1},
                                "params": {"refine": false}}),
        "kernel-bounds" => json!({"lattice": {"N": [8, 16]}, "params": {"lemmas": ["t0"]}}),
        "leibniz-check" => json!({"mc": {"samples": 1000}}),
        "picard-consistency" => json!({"lattice": {"N": 8}, "time": {"horizon": 0.05},
                                        "params": {"intermediate_times": [0.025], "iterations": 20}}),
        "sigma-scaling" => json!({"lattice": {"N": [8, 16]}}),
        "singular-integrals" => json!({"mc": {"samples": 500},
                                        "params": {"max_samples": 1000, "t_grid": [2.0, 4.0], "b_list": [-0.75]}}),
        "smoothing-moment" => json!({"lattice": {"N": 32}, "mc": {"samples": 2},
                                      "params": {"n0_list": [4, 8], "time_points": 64}}),
        "variance-identity" => json!({"lattice": {"N": [8, 16]}, "mc": {"samples": 100}}),
        other => panic!("no reduced config for {other}"),
    }
}

#[test]
fn every_experiment_runs_at_reduced_size() {
    let dir = tempfile::tempdir().unwrap();
    for name in EXPERIMENTS {
        let out = dir.path().join(name);
        let mut cfg = tiny(name);
        cfg["experiment"] = json!(name);
        cfg["output"] = json!({"directory": out.to_str().unwrap()});
        let path = write_config(dir.path(), &format!("{name}.json"), &cfg);
        let o = sglab(&["run", &path, "--threads", "2"]);
        assert!(
            matches!(o.status.code(), Some(0) | Some(2)),
            "{name}: {}",
            stderr(&o)
        );
        let report: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(format!("{name}.json"))).unwrap())
                .unwrap();
        assert_eq!(report["experiment"], name);
        assert_eq!(report["pass"].as_bool(), Some(o.status.code() == Some(0)));
        for entry in std::fs::read_dir(&out).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().and_then(|e| e.to_str()) == Some("csv") {
                let text = std::fs::read_to_string(&p).unwrap();
                assert!(text.starts_with("schema_version,"), "{}", p.display());
            }
        }
    }
}
