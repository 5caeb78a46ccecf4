use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn curricula(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curricula"))
        .args(args)
        .env_remove("CURRICULA_LLM_URL")
        .env_remove("CURRICULA_LOG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line}: {e}"))
}

/// Episode plus analysis for the golden task, written into `dir`.
fn analyzed(dir: &Path) -> (PathBuf, PathBuf) {
    let ep = curricula(&["episode", s(&fixture("apartment_a.json")), "--task", s(&fixture("task_a.json")), "--profile", "clearance_blind", "--out", s(dir)]);
    assert!(ep.status.success(), "{}", String::from_utf8_lossy(&ep.stderr));
    let traj = dir.join("trajectory.json");
    let analysis = dir.join("analysis.json");
    let an = curricula(&["analyze", s(&fixture("apartment_a.json")), s(&traj), "--out", s(&analysis)]);
    assert!(an.status.success(), "{}", String::from_utf8_lossy(&an.stderr));
    (traj, analysis)
}

#[test]
fn validate_golden_scene() {
    let out = curricula(&["validate", s(&fixture("apartment_a.json"))]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "{\"issues\":[]}");
}

#[test]
fn validate_reports_overlaps() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("apartment_a.json")).unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, text.replace("\"position\": [3.00, 5.00]", "\"position\": [5.50, 5.40]")).unwrap();
    let out = curricula(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["issues"][0]["kind"], "overlap");
    assert_eq!(stderr_error(&out)["error"], "validation");
}

#[test]
fn usage_errors_exit_two() {
    let out = curricula(&["validate", "/no/such/scene.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["error"], "usage");

    let out = curricula(&["episode", s(&fixture("apartment_a.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["error"], "usage");
}

#[test]
fn episode_and_analysis_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, analysis) = analyzed(dir.path());
    let t: Value = serde_json::from_str(&fs::read_to_string(traj).unwrap()).unwrap();
    assert_eq!(t["profile"], "clearance_blind");
    assert!(dir.path().join("trajectory.svg").is_file());
    let a: Value = serde_json::from_str(&fs::read_to_string(analysis).unwrap()).unwrap();
    assert!(a["outcome"] == "success" || a["outcome"] == "failure");
}

#[test]
fn perturb_with_zero_steps_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, analysis) = analyzed(dir.path());
    let out_dir = dir.path().join("p0");
    let out = curricula(&[
        "perturb", s(&fixture("apartment_a.json")), s(&analysis), "--trajectory", s(&traj), "--steps", "0", "--out", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(out_dir.join("final_scene.json")).unwrap(), fs::read(fixture("apartment_a.json")).unwrap());
    assert_eq!(fs::read_to_string(out_dir.join("steps.log")).unwrap(), "");
}

#[test]
fn perturb_writes_session_and_step_renders() {
    let dir = tempfile::tempdir().unwrap();
    let (traj, analysis) = analyzed(dir.path());
    let out_dir = dir.path().join("p");
    let out = curricula(&[
        "perturb", s(&fixture("apartment_a.json")), s(&analysis), "--trajectory", s(&traj), "--steps", "2", "--seed", "3", "--out", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let session: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("session.json")).unwrap()).unwrap();
    let accepted = session["scenes"].as_array().unwrap().len();
    for i in 1..=accepted {
        assert!(out_dir.join(format!("step_{i:04}.svg")).is_file());
    }
    let attempts = fs::read_to_string(out_dir.join("steps.log")).unwrap().lines().count();
    assert_eq!(attempts, session["steps"].as_array().unwrap().len());
}

#[test]
fn loop_records_match_golden_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = curricula(&["loop", s(&fixture("loop_config.json")), "--out", s(&run), "--iterations", "3", "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(run.join("records.log")).unwrap();
    assert_eq!(log, fs::read_to_string(golden("loop_records.log")).unwrap());
    for t in 0..=3 {
        assert!(run.join(format!("scenes/e_{t:04}.json")).is_file());
    }
}

#[test]
fn external_backend_without_endpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("loop.json");
    let text = fs::read_to_string(fixture("loop_config.json")).unwrap();
    let text = text.replace("\"generator_backend\": \"heuristic\"", "\"generator_backend\": \"external\"");
    let text = text.replace("apartment_", &format!("{}/apartment_", fixtures().display()));
    fs::write(&config, text).unwrap();
    let out = curricula(&["loop", s(&config), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["error"], "backend_unavailable");

    let (traj, analysis) = analyzed(dir.path());
    let out = curricula(&["analyze", s(&fixture("apartment_a.json")), s(&traj), "--backend", "external", "--out", s(&analysis)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn render_png_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("scene.png");
    let out = curricula(&["render", s(&fixture("apartment_a.json")), "--png", "--out", s(&png)]);
    assert!(out.status.success());
    assert!(fs::read(&png).unwrap().starts_with(b"\x89PNG"));
    let svg = dir.path().join("scene.svg");
    let out = curricula(&["render", s(&fixture("apartment_a.json")), "--target", "fridge", "--out", s(&svg)]);
    assert!(out.status.success());
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}
