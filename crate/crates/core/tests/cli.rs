//! Command-line behaviour: artifacts and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn safemil(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safemil"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn safemil")
}

fn write_config(dir: &Path, edit: impl FnOnce(String) -> String) -> String {
    let path = dir.join("exp.toml");
    let out = safemil(&["init", "--env", "speed-chain", path.to_str().unwrap()], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, edit(text)).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn solve_writes_reference_and_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let out = safemil(&["solve", "--env", "hazard-grid", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["reference_return"].as_f64().unwrap() > json["random_return"].as_f64().unwrap());
    assert!(dir.path().join("res/reference.json").exists());
}

#[test]
fn unknown_config_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |t| t + "\nmystery = 3\n");
    let out = safemil(&["gen-data", "--config", &config], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mystery"));
}

#[test]
fn missing_config_file_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = safemil(&["solve", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_before_data_exists_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = safemil(&["train", "--method", "bc-unlabeled", "--out", "empty"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gen-data"));
}

#[test]
fn undersized_pool_is_a_generation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |t| t.replace("pool_size = 2000", "pool_size = 20"));
    let out = safemil(&["gen-data", "--config", &config, "--out", "tiny"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn train_and_eval_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |t| t.replace("steps = 10000", "steps = 300"));
    let common = ["--config", config.as_str(), "--out", "run", "--seed", "2"];
    let run = |sub: &[&str]| {
        let args: Vec<&str> = sub.iter().copied().chain(common.iter().copied()).collect();
        let out = safemil(&args, dir.path());
        assert!(out.status.success(), "{sub:?}: {}", stderr(&out));
        out
    };
    run(&["gen-data"]);
    run(&["train", "--method", "safemil-trajectory"]);
    let cell = dir.path().join("run/runs/safemil-trajectory/seed2");
    for file in ["policy.ckpt", "cost_model.ckpt", "cost_curve.csv", "policy_curve.csv", "record.json"] {
        assert!(cell.join(file).exists(), "missing {file}");
    }
    let out = run(&["eval", "--method", "safemil-trajectory"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("method,env,seed,return,cost"));
    assert!(lines.next().unwrap().starts_with("safemil-trajectory,speed_chain,2,"));
    assert!(cell.join("eval.json").exists());
}
