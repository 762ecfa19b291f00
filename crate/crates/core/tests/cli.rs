use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tunelab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tunelab")).args(args).current_dir(cwd).output().expect("spawn tunelab")
}

const SMALL: &str = r#"out_dir = "run"
replications = [1]
catalog = { n_tables = 3, rows_range = [5000, 50000], cols_per_table_range = [3, 5] }
n_templates = 6
schedule = { kind = "static", total_rounds = 4, templates_per_round = 4 }
"#;

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn minimal_run_writes_three_files() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("exp.toml"), SMALL).unwrap();
    let o = tunelab(&["run", "exp.toml"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(listing(&d.path().join("run")), vec!["full-s1.csv", "full-s1.jsonl", "manifest.json"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("full"));
}

#[test]
fn identical_configs_give_identical_csv() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("exp.toml"), SMALL).unwrap();
    assert!(tunelab(&["run", "exp.toml", "--out", "a"], d.path()).status.success());
    assert!(tunelab(&["run", "exp.toml", "--out", "b", "--jobs", "1"], d.path()).status.success());
    let a = fs::read(d.path().join("a/full-s1.csv")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b/full-s1.csv")).unwrap());
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.toml"), "out_dir = \"run\"\nreplications = [1]\nrho_typo = 3\n").unwrap();
    let o = tunelab(&["run", "bad.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml:3:"));
    assert!(!d.path().join("run").exists());

    fs::write(d.path().join("empty.toml"), "out_dir = \"run\"\nreplications = []\n").unwrap();
    let o = tunelab(&["run", "empty.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty.toml:2:"));
    assert!(!d.path().join("run").exists());
}

#[test]
fn io_failure_exits_3() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("exp.toml"), SMALL).unwrap();
    fs::write(d.path().join("blocker"), "").unwrap();
    let o = tunelab(&["run", "exp.toml", "--out", "blocker/sub"], d.path());
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(tunelab(&["run", "missing.toml"], d.path()).status.code(), Some(3));
}

#[test]
fn replay_verifies_and_detects_tampering() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("exp.toml"), SMALL.replace("replications = [1]", "replications = [1, 2]").replace("n_templates = 6", "n_templates = 8")).unwrap();
    assert!(tunelab(&["run", "exp.toml", "--schedule", "continuous"], d.path()).status.success());
    let o = tunelab(&["replay", "run/manifest.json"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("4 artifacts reproduced, 0 mismatched"));

    let path = d.path().join("run/manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["artifacts"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    let o = tunelab(&["replay", "run/manifest.json"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("MISMATCH full-s1.csv"));
}

#[test]
fn compare_writes_plot_tsvs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("replications = [1]", "replications = [1]\nbaselines = [\"whatif_greedy\", \"plain_epsilon_greedy\"]");
    fs::write(d.path().join("exp.toml"), cfg).unwrap();
    assert!(tunelab(&["run", "exp.toml", "--out", "x"], d.path()).status.success());
    assert!(tunelab(&["run", "exp.toml", "--out", "y", "--seed", "5"], d.path()).status.success());
    let o = tunelab(&["compare", "x", "y", "--out", "plots"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = listing(&d.path().join("plots"));
    assert_eq!(files.len(), 6);
    let tsv = fs::read_to_string(d.path().join("plots/x-full.tsv")).unwrap();
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), 4);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("whatif_greedy") && table.contains("±"));
}
