mod common;

use std::path::Path;
use std::process::Command;

use augbench::demo::{demo_corpus, write_imdb_layout};
use common::file_hash;

fn augbench(dir: &Path, args: &[&str]) -> String {
    let output = Command::new(env!("CARGO_BIN_EXE_augbench"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run augbench");
    assert!(
        output.status.success(),
        "augbench {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

#[test]
fn verbs_chain_from_ingest_to_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_imdb_layout(&demo_corpus(60, 20, 1), root.join("aclImdb")).unwrap();

    augbench(root, &["ingest", "--imdb-dir", "aclImdb", "--valid-frac", "0.25", "--seed", "2"]);
    augbench(root, &["augment", "--in", "out/corpus.jsonl", "--technique", "bt", "--langs", "es,fr", "--cache", "cache.jsonl"]);
    let trained = augbench(root, &["train", "--in", "out/augmented.jsonl", "--model-out", "model.json"]);
    assert!(trained.starts_with("test accuracy"));
    augbench(root, &["predict", "--model", "model.json", "--in", "out/corpus.jsonl", "--split", "valid", "--out", "a.csv"]);
    augbench(root, &["predict", "--model", "model.json", "--in", "out/augmented.jsonl", "--split", "valid", "--out", "b.csv"]);
    augbench(root, &["ensemble", "fit", "--preds", "a.csv", "b.csv", "--labels", "out/corpus.jsonl", "--out", "w.json"]);
    augbench(root, &["ensemble", "combine", "--preds", "a.csv", "b.csv", "--weights", "w.json", "--out", "e.csv"]);
    let report = augbench(root, &["ensemble", "report", "--preds", "a.csv", "e.csv", "--labels", "out/corpus.jsonl"]);
    assert!(report.starts_with("source,n,frac_confident,pred_std,accuracy\na,30,"));
    augbench(root, &["analyze", "--model", "model.json", "--in", "out/corpus.jsonl", "--probe-template", "{rating}"]);
    assert!(root.join("out/regression.json").exists());
    assert_eq!(std::fs::read_to_string(root.join("out/probe.csv")).unwrap().lines().count(), 13);

    let cache_lines = std::fs::read_to_string(root.join("cache.jsonl")).unwrap().lines().count();
    augbench(root, &["backtranslate", "--in", "out/corpus.jsonl", "--langs", "es", "--cache", "cache.jsonl"]);
    let after = std::fs::read_to_string(root.join("cache.jsonl")).unwrap().lines().count();
    // Training documents were already translated through Spanish; only the others are new.
    assert_eq!(after - cache_lines, 2 * (30 + 40));
}

#[test]
fn run_reproduces_reports_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_imdb_layout(&demo_corpus(80, 40, 2), root.join("aclImdb")).unwrap();
    std::fs::write(
        root.join("exp.toml"),
        r#"
train_sizes = [20, 40]
seeds = [0, 1, 2]

[data]
imdb_dir = "aclImdb"

[translation]
provider = "mock"
cache = "cache/translations.jsonl"

[[arms]]
name = "None"

[[arms]]
name = "10 Languages"
technique = "bt"
languages = ["es", "fr", "de", "af", "ru", "cs", "et", "ht", "bn", "it"]
"#,
    )
    .unwrap();
    let table = augbench(root, &["--out-dir", "r1", "run", "exp.toml"]);
    assert!(table.starts_with("Languages,Error@N=20,Error@N=40\nNone,"));
    augbench(root, &["--out-dir", "r2", "run", "exp.toml"]);
    for name in ["report.csv", "table.csv"] {
        assert_eq!(file_hash(&root.join("r1").join(name)), file_hash(&root.join("r2").join(name)));
    }
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_augbench"))
        .current_dir(dir.path())
        .args(["ingest", "--imdb-dir", "missing"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("missing"));
}

#[test]
fn out_dir_flag_overrides_config_report_dir() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_imdb_layout(&demo_corpus(30, 10, 3), root.join("aclImdb")).unwrap();
    std::fs::write(
        root.join("exp.toml"),
        "train_sizes = [10]\nseeds = [0]\nreport_dir = \"from_config\"\n[data]\nimdb_dir = \"aclImdb\"\n",
    )
    .unwrap();
    augbench(root, &["run", "exp.toml"]);
    assert!(root.join("from_config/report.csv").exists());
    augbench(root, &["--out-dir", "from_flag", "run", "exp.toml"]);
    assert!(root.join("from_flag/report.csv").exists());
}
