use std::path::Path;
use std::process::{Command, Output};

fn toolplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toolplan"))
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn setup(dir: &Path, seed: &str) {
    let w = path(dir, &format!("world{seed}.json"));
    assert!(toolplan(&["gen-world", "--tools", "8", "--feature-dim", "6", "--max-depth", "4", "--seed", seed, "--out", &w]).status.success());
    let t = path(dir, &format!("tasks{seed}.json"));
    assert!(toolplan(&["gen-tasks", "--world", &w, "--count", "60", "--depth-min", "2", "--depth-max", "4", "--seed", seed, "--out", &t]).status.success());
}

#[test]
fn rejects_mismatched_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, "1");
    setup(d, "2");
    let out = toolplan(&["train", "--world", &path(d, "world1.json"), "--tasks", &path(d, "tasks2.json"), "--epochs", "1", "--out", &path(d, "p.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different world"));

    assert!(toolplan(&["explore", "--world", &path(d, "world2.json"), "--out", &path(d, "kb2.json")]).status.success());
    assert!(toolplan(&["train", "--world", &path(d, "world1.json"), "--tasks", &path(d, "tasks1.json"), "--epochs", "1", "--out", &path(d, "p1.json")]).status.success());
    let out = toolplan(&["eval", "--world", &path(d, "world1.json"), "--tasks", &path(d, "tasks1.json"), "--planner", &path(d, "p1.json"), "--kb", &path(d, "kb2.json"), "--out", &path(d, "m.json")]);
    assert!(!out.status.success());

    let out = toolplan(&["gen-world", "--tools", "0", "--out", &path(d, "bad.json")]);
    assert!(!out.status.success());
}

#[test]
fn eval_writes_plans_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, "3");
    let (w, t) = (path(d, "world3.json"), path(d, "tasks3.json"));
    assert!(toolplan(&["explore", "--world", &w, "--seed", "3", "--out", &path(d, "kb.json")]).status.success());
    assert!(toolplan(&["train", "--world", &w, "--tasks", &t, "--epochs", "2", "--seed", "3", "--out", &path(d, "p.json"), "--log", &path(d, "log.csv")]).status.success());
    let log = std::fs::read_to_string(d.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,mean_reward"));

    let out = toolplan(&[
        "eval", "--world", &w, "--tasks", &t, "--planner", &path(d, "p.json"), "--kb", &path(d, "kb.json"),
        "--holdout-seed", "3", "--out", &path(d, "m.json"), "--export-plans", &path(d, "plans.json"), "--trace", &path(d, "trace.txt"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(metrics["tasks_total"], 12);
    let plans: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(d.join("plans.json")).unwrap()).unwrap();
    assert_eq!(plans.len(), 12);
    let trace = std::fs::read_to_string(d.join("trace.txt")).unwrap();
    assert_eq!(trace.lines().filter(|l| l.starts_with("task=")).count(), 12);
    let calls = trace.lines().filter(|l| l.starts_with("step=")).count() as u64;
    assert_eq!(metrics["calls_attempted"].as_u64().unwrap(), calls);
}

#[test]
fn ablate_reports_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, "4");
    for which in ["no_exploration", "no_planning_reward"] {
        let out_path = path(d, &format!("{which}.json"));
        let out = toolplan(&[
            "ablate", "--which", which, "--world", &path(d, "world4.json"), "--tasks", &path(d, "tasks4.json"),
            "--epochs", "2", "--out", &out_path,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
        assert_eq!(report["variant_name"], which);
        assert!(report["baseline"]["success_rate"].is_number());
        assert!(report["variant"]["invocation_error_rate"].is_number());
        assert!(report["direction_holds"].is_boolean());
    }
}
