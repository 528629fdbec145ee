//! End-to-end checks of the binary: exit codes, printed rows, and byte
//! stability of file outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixplan"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Minimal three-state bundle written into `dir`; `row_sum` scales the first
/// row of the source so tests can inject a sum defect.
fn write_bundle(dir: &Path, row_scale: f64) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("tiny.graph"), "entry: gate,loop\ngate: entry\nloop: entry\n").unwrap();
    let source = format!(
        r#"{{"entry": [{}, {}], "gate": [1.0], "loop": [1.0]}}"#,
        0.6 * row_scale,
        0.4 * row_scale
    );
    fs::write(dir.join("source.json"), source).unwrap();
    fs::write(
        dir.join("target.json"),
        r#"{"entry": [0.8, 0.2], "gate": [1.0], "loop": [1.0]}"#,
    )
    .unwrap();
    let scenario = r#"{
  "graph": "tiny.graph",
  "sources": ["source.json"],
  "lots": [{"gate": "gate", "capacity": 4, "target": "target.json"}],
  "entry_state": "entry",
  "arrivals": {"count": 3, "interval": 2},
  "planner_window": 2,
  "seed": 9,
  "tick_budget": 200
}"#;
    let path = dir.join("scenario.json");
    fs::write(&path, scenario).unwrap();
    path
}

#[test]
fn validate_accepts_the_shipped_bundle() {
    let out = run(&[
        "validate",
        "--scenario",
        scenarios_dir().join("benchmark.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("scenario: ok"));
}

#[test]
fn validate_flags_a_row_sum_defect_naming_the_state() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_bundle(dir.path(), 0.9);
    let out = run(&["validate", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("entry"), "defective state not named: {stdout}");
}

#[test]
fn missing_file_exits_with_the_io_code() {
    let out = run(&["validate", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}

#[test]
fn infeasible_plan_exits_with_the_dedicated_code() {
    // Forbidding the gate leaves the single source with ~0.42 safe mass,
    // far below the 0.973 the tolerance demands: no stage solution exists.
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), 1.0);
    let scenario = dir.path().join("scenario.json");
    let mut text: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&scenario).unwrap()).unwrap();
    text["forbidden_links"] = serde_json::json!(["gate"]);
    text["epsilon"] = serde_json::json!(0.027);
    fs::write(&scenario, serde_json::to_string(&text).unwrap()).unwrap();
    let out = run(&[
        "plan",
        "--scenario",
        scenario.to_str().unwrap(),
        "--state",
        "entry",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn plan_prints_the_stage_one_row_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_bundle(dir.path(), 1.0);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "plan",
        "--scenario",
        scenario.to_str().unwrap(),
        "--state",
        "entry",
        "--window",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("gate"));
    let policy: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("policy.json")).unwrap()).unwrap();
    assert_eq!(policy["horizon"], 1);
    // single source: the stage-1 weights are the unit vector
    assert_eq!(policy["stages"][0]["states"]["entry"]["alpha"][0], 1.0);
}

#[test]
fn plan_outputs_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_bundle(dir.path(), 1.0);
    let read_policy = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "plan",
            "--scenario",
            scenario.to_str().unwrap(),
            "--state",
            "entry",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        fs::read(out_dir.join("policy.json")).unwrap()
    };
    assert_eq!(read_policy("a"), read_policy("b"));
}

#[test]
fn constrained_plan_respects_the_forbidden_gate_mass() {
    // gate_a is forbidden with epsilon 0.027; cw11 has gate_a as a successor.
    let out = run(&[
        "plan",
        "--scenario",
        scenarios_dir()
            .join("forbid_lot_a_tight.json")
            .to_str()
            .unwrap(),
        "--state",
        "cw11",
        "--out-dir",
        "/tmp/mixplan-cli-test-plan",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let gate_mass: f64 = stdout
        .lines()
        .find_map(|l| l.trim().strip_prefix("gate_a "))
        .expect("gate_a line present")
        .parse()
        .unwrap();
    assert!(gate_mass <= 0.027 + 1e-9, "gate mass {gate_mass}");
}

#[test]
fn binary_flag_switches_the_planner() {
    let out_dir = "/tmp/mixplan-cli-test-binary";
    let out = run(&[
        "plan",
        "--scenario",
        scenarios_dir().join("benchmark.json").to_str().unwrap(),
        "--state",
        "cw0",
        "--algorithm",
        "binary",
        "--out-dir",
        out_dir,
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let policy: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(Path::new(out_dir).join("policy.json")).unwrap(),
    )
    .unwrap();
    // binary plans put a unit weight on exactly one source
    let alpha = policy["stages"][0]["states"]["cw0"]["alpha"].as_array().unwrap();
    let ones = alpha.iter().filter(|v| v.as_f64().unwrap() == 1.0).count();
    let zeros = alpha.iter().filter(|v| v.as_f64().unwrap() == 0.0).count();
    assert_eq!(ones, 1);
    assert_eq!(zeros, alpha.len() - 1);
}

#[test]
fn simulate_writes_the_three_csvs_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_bundle(dir.path(), 1.0);
    let run_sim = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "simulate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{out:?}");
        (
            fs::read(out_dir.join("unparked.csv")).unwrap(),
            fs::read(out_dir.join("cars.csv")).unwrap(),
            fs::read(out_dir.join("summary.csv")).unwrap(),
        )
    };
    let a = run_sim("sim_a");
    let b = run_sim("sim_b");
    assert_eq!(a, b);
    let cars = String::from_utf8(a.1).unwrap();
    assert!(cars.starts_with("car_id,enter_tick,park_tick,time_to_park\n"));
    assert_eq!(cars.lines().count(), 4); // header + 3 cars
}

#[test]
fn bench_writes_the_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_bundle(dir.path(), 1.0);
    let out_dir = dir.path().join("bench");
    let out = run(&[
        "bench",
        "--scenario",
        scenario.to_str().unwrap(),
        "--s-range",
        "1:2",
        "--t-range",
        "1:2",
        "--reps",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("S,T,mean_seconds,std_seconds"));
    assert_eq!(lines.count(), 4);
}
