use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fedchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedchain")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
  "seed": 3,
  "rounds": 10,
  "fairness_interval": 5,
  "dataset": {"seed": 4, "n_clients": 3, "samples_per_client": [10, 20, 30],
              "dim": 4, "noise": 0.1, "behaviors": ["honest", "honest", "negator"]}
}"#;

fn run_dir(stdout: &[u8]) -> PathBuf {
    PathBuf::from(String::from_utf8(stdout.to_vec()).unwrap().trim())
}

#[test]
fn run_then_audit_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let run = fedchain(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let dir = run_dir(&run.stdout);
    assert!(dir.starts_with(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["checkpoints"].as_array().unwrap().len(), 2);

    let audit = fedchain(&["audit", "--out", dir.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(0), "{}", String::from_utf8_lossy(&audit.stdout));
}

#[test]
fn corrupted_blob_fails_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let run = fedchain(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let dir = run_dir(&run.stdout);
    let blob = fs::read_dir(dir.join("blobs")).unwrap().next().unwrap().unwrap().path();
    let mut bytes = fs::read(&blob).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x80;
    fs::write(&blob, bytes).unwrap();
    let audit = fedchain(&["audit", "--out", dir.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&audit.stdout).contains("hash_mismatch"));
}

#[test]
fn negative_alpha_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace("\"rounds\": 10,", "\"rounds\": 10, \"alpha\": -0.5,");
    let config = write_config(tmp.path(), &body);
    let run = fedchain(&["run", "--config", config.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("alpha"));
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL.replace("\"seed\": 3,", "\"seed\": 3, \"colour\": \"blue\",");
    let config = write_config(tmp.path(), &body);
    let run = fedchain(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let missing = fedchain(&["gas-sweep", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn gas_sweep_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let sweep = fedchain(&["gas-sweep", "--config", config.to_str().unwrap(), "--sizes", "10,100,1000"]);
    assert_eq!(sweep.status.code(), Some(0));
    let text = String::from_utf8(sweep.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "param_size,register,submit,aggregate,validate,distribute");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.contains(",45373,") && l.ends_with(",219961")));
}

#[test]
fn audit_without_run_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let audit = fedchain(&["audit", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(1));
}
