use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diu_core::EvalReport;

const TINY: &str = "\
[data]
n_identities = 10
n_samples = 4

[teacher]
epochs = 2

[train]
epochs = 1
batch_size = 8
";

fn diu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diu"))
        .args(args)
        .output()
        .expect("spawn diu")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

/// Runs `args` with the tiny config and output directory, asserting success.
fn ok(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut full = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    full.extend_from_slice(args);
    let o = diu(&full);
    assert_eq!(o.status.code(), Some(0), "{args:?} failed: {}", stderr(&o));
    o
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn assert_run_record(dir: &Path, command: &str) {
    let run: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], command);
    assert_eq!(run["input_hash"].as_str().unwrap().len(), 64);
    assert!(dir.join("config.toml").exists());
}

#[test]
fn gen_data_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    ok(&cfg, &out, &["gen-data"]);
    let first = tree_bytes(&out.join("data"));
    ok(&cfg, &out, &["gen-data"]);
    assert_eq!(first, tree_bytes(&out.join("data")));

    let index: serde_json::Value = serde_json::from_slice(&fs::read(out.join("data/index.json")).unwrap()).unwrap();
    assert_eq!(index["entries"].as_array().unwrap().len(), 10 * 4 * 2);
    assert_run_record(&out.join("data"), "gen-data");
}

#[test]
fn default_gen_data_lists_every_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let o = diu(&["--out", tmp.path().to_str().unwrap(), "gen-data"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let index: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("data/index.json")).unwrap()).unwrap();
    assert_eq!(index["entries"].as_array().unwrap().len(), 100 * 20 * 2);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let out = out.to_str().unwrap();
    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, "[train.loss]\ngama = 0.5\n").unwrap();
    let typo = typo.to_str().unwrap();

    let cases: Vec<Vec<&str>> = vec![
        vec!["--config", typo, "--out", out, "gen-data"],
        vec!["--out", out, "ablate", "--axis", "gamma", "--values", "1.5"],
        vec!["--out", out, "ablate", "--axis", "layers", "--values", "0,9"],
        vec!["--out", out, "eval"],
        vec!["--out", out, "train", "--stage", "student", "--fold", "0"],
        vec!["--out", out, "frobnicate"],
        vec!["--config", "/nonexistent/diu.toml", "gen-data"],
    ];
    for args in cases {
        let o = diu(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = diu(&["--config", typo, "--out", out, "gen-data"]);
    assert!(stderr(&o).contains("gama"), "{}", stderr(&o));
}

#[test]
fn diu_before_teacher_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = diu(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "train",
        "--stage",
        "diu",
        "--fold",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("teacher checkpoint not found for fold 0"), "{}", stderr(&o));

    let o = diu(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "eval", "--fold", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn pipeline_writes_reports_and_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    for fold in 0..5 {
        let f = fold.to_string();
        ok(&cfg, &out, &["train", "--stage", "teacher", "--fold", &f]);
        ok(&cfg, &out, &["train", "--stage", "diu", "--fold", &f]);
    }
    let diu_dir = out.join("fold0/diu");
    for name in ["meta.json", "manifest.json", "params.bin", "log.jsonl"] {
        assert!(diu_dir.join(name).exists(), "missing {name}");
    }
    assert_run_record(&diu_dir, "train");
    diu_core::load_checkpoint(&diu_dir).expect("student checkpoint loads");

    let stdout = String::from_utf8(ok(&cfg, &out, &["eval", "--checkpoint", "diu", "--all-folds"]).stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("fold ")).count(), 5, "{stdout}");
    let eval_dir = out.join("eval/diu");
    assert_run_record(&eval_dir, "eval");

    let mut reader = csv::Reader::from_path(eval_dir.join("aggregate.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "value");
    assert!(header.iter().any(|h| h == "eer_mean") && header.iter().any(|h| h == "eer_std"));
    let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    for cell in rows[0].iter().skip(1) {
        cell.parse::<f64>().expect("numeric aggregate cell");
    }

    for fold in 0..5 {
        let bytes = fs::read(eval_dir.join(format!("fold{fold}.json"))).unwrap();
        let report: EvalReport = serde_json::from_slice(&bytes).unwrap();
        let mut again = serde_json::to_vec_pretty(&report).unwrap();
        again.push(b'\n');
        assert_eq!(bytes, again, "fold {fold} report is not byte-stable");
        assert!(eval_dir.join(format!("roc_fold{fold}.csv")).exists());
    }

    ok(&cfg, &out, &["ablate", "--axis", "gamma", "--values", "0,0.5,1"]);
    let ablation = out.join("ablation_gamma");
    let mut reader = csv::Reader::from_path(ablation.join("ablation.csv")).unwrap();
    let values: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(values, ["0", "0.5", "1"]);
    assert!(fs::read_to_string(ablation.join("summary.txt")).unwrap().contains("EER"));
    assert_run_record(&ablation, "ablate");
}

#[test]
fn training_is_reproducible_and_seed_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let params: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = tmp.path().join(name);
            ok(&cfg, &out, &["--seed", "9", "train", "--stage", "teacher", "--fold", "1"]);
            fs::read(out.join("fold1/teacher/params.bin")).unwrap()
        })
        .collect();
    assert_eq!(params[0], params[1]);

    let run: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("a/fold1/teacher/run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["seed"], 9);
    let resolved = fs::read_to_string(tmp.path().join("a/fold1/teacher/config.toml")).unwrap();
    assert!(resolved.contains("[train.loss]") && resolved.contains("gamma"), "{resolved}");
}
