use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 2

[dataset]
classes = 3
input_dim = 6
per_class = 40
separation = 3.0

[net]
widths = [6, 12]

[cfm]
ipc = 4
batch_size = 6
iterations = 10

[compare]
seeds = [0, 1]
jobs = 1
"#;

fn unidd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unidd"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("UNIDD_SEED")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn squeeze_distill_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    for cmd in ["squeeze", "distill", "eval"] {
        let out = unidd(&[cmd, &cfg], dir.path());
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval-2.json")).unwrap()).unwrap();
    let acc = record["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(record["seed"], 2);
    assert!(record["squeeze_hash"].as_str().unwrap().len() == 64);
    assert!(dir.path().join("loss-2.csv").exists());
    assert!(dir.path().join("synthetic-2.uds.meta.json").exists());
}

#[test]
fn distill_without_squeeze_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    assert_eq!(unidd(&["distill", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[cfm]\nitertions = 3\n");
    assert_eq!(unidd(&["squeeze", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn eval_refuses_foreign_squeeze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    assert!(unidd(&["squeeze", &cfg], dir.path()).status.success());
    assert!(unidd(&["distill", &cfg], dir.path()).status.success());
    let other = config(dir.path(), &SMALL.replace("widths = [6, 12]", "widths = [6, 10]"));
    assert!(unidd(&["squeeze", &other], dir.path()).status.success());
    assert_eq!(unidd(&["eval", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn seed_flag_beats_environment_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    assert!(unidd(&["squeeze", &cfg], dir.path()).status.success());
    let with_env = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_unidd"))
            .args(args)
            .arg("--out")
            .arg(dir.path())
            .env("UNIDD_SEED", "7")
            .output()
            .unwrap()
    };
    assert!(with_env(&["distill", &cfg]).status.success());
    assert!(dir.path().join("synthetic-7.uds").exists());
    assert!(with_env(&["distill", &cfg, "--seed", "9"]).status.success());
    assert!(dir.path().join("synthetic-9.uds").exists());
    assert!(!dir.path().join("synthetic-2.uds").exists());
}

#[test]
fn duplicated_compare_entries_keep_one_row_each() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL}\n[[compare.variants]]\nname = \"a\"\n[compare.variants.cfm]\nipc = 4\nbatch_size = 6\niterations = 5\n\
         [[compare.variants]]\nname = \"a\"\n[compare.variants.cfm]\nipc = 4\nbatch_size = 6\niterations = 5\n"
    );
    let cfg = config(dir.path(), &text);
    let out = unidd(&["compare", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("compare-filters.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
    assert!(dir.path().join("compare-ablation.csv").exists());
}

#[test]
fn filters_csv_and_unstable_step() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    let ok = Command::new(env!("CARGO_BIN_EXE_unidd"))
        .args(["filters", "--beta", "0.1", "--grid", "0:2:5", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(ok.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 6);
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first.last().unwrap() - 10.0).abs() < 1e-12);
    let bad = Command::new(env!("CARGO_BIN_EXE_unidd"))
        .args(["filters", "--alpha", "0.5", "--grid", "0:2:5"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
