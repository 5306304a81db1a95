use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn evgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evgrid"))
        .args(args)
        .env("EVGRID_LOG", "error")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Every file the manifest lists exists and parses in its own format.
fn check_manifest(dir: &Path) -> Vec<String> {
    let manifest = read_json(&dir.join("manifest.json"));
    let mut names = Vec::new();
    for f in manifest["files"].as_array().unwrap() {
        let name = f["path"].as_str().unwrap();
        let path = dir.join(name);
        let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
        if name.ends_with(".jsonl") {
            for line in text.lines() {
                serde_json::from_str::<Value>(line).unwrap();
            }
        } else if name.ends_with(".json") {
            serde_json::from_str::<Value>(&text).unwrap();
        } else if name.ends_with(".csv") {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let width = r.headers().unwrap().len();
            for rec in r.records() {
                assert_eq!(rec.unwrap().len(), width, "{name}");
            }
        }
        names.push(name.to_string());
    }
    names
}

#[test]
fn simulate_is_deterministic() {
    let case = fixture("case4_demo.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = evgrid(&["simulate", "--case", path_str(&case), "--seed", "42", "--out", path_str(dir.path())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let names = check_manifest(a.path());
    for f in ["trace.csv", "trace.json", "soc.csv", "stage1.jsonl", "stage2.jsonl", "summary.json"] {
        assert!(names.iter().any(|n| n == f), "missing {f}");
    }
    for f in ["trace.csv", "soc.csv", "stage1.jsonl", "stage2.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let soc = fs::read_to_string(a.path().join("soc.csv")).unwrap();
    assert_eq!(soc.lines().next().unwrap(), "t,pev_0,pev_1,pev_2");
    assert_eq!(soc.lines().count(), 8);
}

#[test]
fn generated_fleet_follows_seed() {
    let case = fixture("case4_demo.json");
    let fleet = fixture("fleet_generated.json");
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = evgrid(&[
            "--mode", "simulate", "--case", path_str(&case), "--fleet", path_str(&fleet), "--seed", seed, "--out",
            path_str(dir.path()),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join("trace.csv")).unwrap()
    };
    assert_eq!(run("5"), run("5"));
}

#[test]
fn oracle_reports_both_objectives() {
    let dir = tempfile::tempdir().unwrap();
    let case = fixture("case4_demo.json");
    let out = evgrid(&["oracle", "--case", path_str(&case), "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    check_manifest(dir.path());
    let report = read_json(&dir.path().join("oracle.json"));
    let mpc = report["mpc_objective"].as_f64().unwrap();
    let oracle = report["oracle_objective"].as_f64().unwrap();
    assert!(oracle <= mpc * (1.0 + 1e-6), "oracle {oracle} above online {mpc}");
    assert!(((mpc - oracle) / oracle).abs() <= 1e-3);
    assert_eq!(report["candidates"].as_u64(), Some(600));
}

#[test]
fn validate_accepts_fixtures() {
    for name in ["case4_demo.json", "case4_meshgap.json"] {
        let out = evgrid(&["validate", "--case", path_str(&fixture(name))]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn malformed_case_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = read_json(&fixture("case4_demo.json"));
    doc["buses"][1]["v_min"] = Value::String("low".into());
    let path = dir.path().join("bad.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = evgrid(&["validate", "--case", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("buses[1].v_min"), "{err}");
}

#[test]
fn bad_parameters_exit_2() {
    let case = fixture("case4_demo.json");
    assert_eq!(evgrid(&["validate", "--case", path_str(&case), "--L", "1.0"]).status.code(), Some(2));
    assert_eq!(evgrid(&["--case", path_str(&case)]).status.code(), Some(2));
    assert_eq!(evgrid(&["validate", "--case", "/nonexistent/case.json"]).status.code(), Some(2));
}

#[test]
fn overloaded_network_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = read_json(&fixture("case4_demo.json"));
    doc["profiles"]["base_loads"][0]["p"] = Value::from(50.0);
    let path = dir.path().join("overload.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = evgrid(&["simulate", "--case", path_str(&path), "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn iteration_cap_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let case = fixture("case4_meshgap.json");
    let out = evgrid(&["solve-slot", "--case", path_str(&case), "--max-iters", "1", "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_slot_writes_solution() {
    let dir = tempfile::tempdir().unwrap();
    let case = fixture("case4_meshgap.json");
    let out = evgrid(&["solve-slot", "--case", path_str(&case), "--slot", "2", "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    check_manifest(dir.path());
    let slot = read_json(&dir.path().join("slot.json"));
    let lo = slot["stage1_cost"].as_f64().unwrap();
    let hi = slot["stage2_cost"].as_f64().unwrap();
    assert!(hi >= lo - 1e-6 && hi <= lo * 1.002);
    assert_eq!(slot["voltage"].as_array().unwrap().len(), 4);
}
