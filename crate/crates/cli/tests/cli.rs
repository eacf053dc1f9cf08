use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
seeds = [0, 1]
methods = [{ name = "erm" }, { name = "jtt" }, { name = "umix" }]

[dataset]
kind = "four_moons"
samples_per_group = [120, 120, 12, 12]
eval_samples_per_group = 40

[train]
epochs = 6
arch = { kind = "mlp", hidden = [8] }

[uncertainty]
start_epoch = 1
window = 3
eta = 5.0

[theory]
samples = 50
alphas = [4.0, 8.0]
mc_samples = 4000
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_umix-bench"));
    c.env_remove("UMIX_BENCH_WORKERS");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_succeeds_and_bad_usage_is_a_config_error() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().output().unwrap()), 1);
    assert_eq!(code(&bin().args(["train"]).output().unwrap()), 1);
    assert_eq!(
        code(&bin().args(["fly", "--config", "x.toml"]).output().unwrap()),
        1
    );
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let missing = run(&["sweep"], &tmp.path().join("nope.toml"), &out);
    assert_eq!(code(&missing), 1);

    let unknown = write_config(
        tmp.path(),
        "unknown.toml",
        &SMALL.replace("\"jtt\"", "\"sgd\""),
    );
    let o = run(&["sweep"], &unknown, &out);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("umix") && stderr(&o).contains("group_dro"),
        "{}",
        stderr(&o)
    );

    let short = write_config(
        tmp.path(),
        "short.toml",
        &SMALL.replace("epochs = 6", "epochs = 3"),
    );
    let o = run(&["weights"], &short, &out);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("start_epoch + window"),
        "{}",
        stderr(&o)
    );

    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    assert_eq!(code(&run(&["report"], &cfg, &out)), 1);
    assert_eq!(code(&run(&["sweep", "--seeds", "1,1"], &cfg, &out)), 1);
    let o = bin()
        .env("UMIX_BENCH_WORKERS", "many")
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(!out.join("result.json").exists());
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    // nothing trained yet, so there are no checkpoints to evaluate
    let o = run(&["evaluate"], &cfg, &tmp.path().join("empty"));
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn staged_subcommands_produce_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");

    assert_eq!(code(&run(&["generate"], &cfg, &out)), 0);
    for split in ["train", "val", "test"] {
        assert!(out.join("data").join(format!("{split}.csv")).is_file());
    }
    let lines = std::fs::read_to_string(out.join("data/train.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 1 + 264);

    assert_eq!(code(&run(&["weights"], &cfg, &out)), 0);
    for s in [0, 1] {
        let dir = out.join(format!("seed-{s}/uncertainty"));
        assert!(dir.join("trace.csv").is_file() && dir.join("weights-eta5.csv").is_file());
    }

    let o = run(&["train"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["evaluate"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.starts_with("| Method | Avg. | Worst |"));
    assert_eq!(table.lines().count(), 2 + 3);
    for f in ["result.json", "runs.csv", "report.md"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    std::fs::remove_file(out.join("runs.csv")).unwrap();
    let o = run(&["report", "--format", "csv"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("runs.csv")).unwrap(), csv);

    let o = run(&["theory-check"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let theory: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("theory.json")).unwrap()).unwrap();
    assert_eq!(theory["checks"].as_array().unwrap().len(), 2);
    assert!(out.join("eigenvalues.csv").is_file());
}

fn result_without_timestamps(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("result.json")).unwrap()).unwrap();
    v["provenance"]["started_unix"] = 0.into();
    v["provenance"]["finished_unix"] = 0.into();
    v
}

#[test]
fn worker_count_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let mut results = Vec::new();
    for workers in ["1", "3"] {
        let out = tmp.path().join(format!("w{workers}"));
        let o = bin()
            .env("UMIX_BENCH_WORKERS", workers)
            .args(["sweep", "--seeds", "4,2", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(out.join("seed-4").is_dir() && !out.join("seed-0").exists());
        results.push(result_without_timestamps(&out));
    }
    assert_eq!(results[0], results[1]);
    let seeds: Vec<u64> = results[0]["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, vec![4, 2, 4, 2, 4, 2]);
}
