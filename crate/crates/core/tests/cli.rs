mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use stackcnn::ensemble::fold_ensemble_predict;
use stackcnn::metrics::MetricReport;
use stackcnn::model::classify;
use stackcnn::store::load_stack;
use stackcnn::Class;

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stackcnn"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_dir(dir: &Path) -> PathBuf {
    dir.join("out").join(format!("run-{:016x}", 3))
}

#[test]
fn validate_prints_the_class_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let stdout = ok(&run(&cfg, &["validate"]));
    assert!(stdout.contains("class 1") && stdout.contains("class 3"), "{stdout}");
    assert!(stdout.contains("20"), "{stdout}");
}

#[test]
fn validate_rejects_label_zero_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut content = fs::read_to_string(synthetic_dir().join("train.tsv")).unwrap();
    content.push_str("bad\t0\tnothing here\n");
    let train = dir.path().join("bad.tsv");
    fs::write(&train, content).unwrap();
    let cfg = write_config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap();
    let original = format!("{:?}", synthetic_dir().join("train.tsv"));
    fs::write(&cfg, text.replace(&original, &format!("{train:?}"))).unwrap();

    let out = run(&cfg, &["validate"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("line 61"), "{}", stderr(&out));
}

#[test]
fn validate_names_a_missing_embedding_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let missing = dir.path().join("no-such-embeddings.txt");
    let text = fs::read_to_string(&cfg).unwrap();
    let shin = format!("shin = {:?}", synthetic_dir().join("embeddings.txt"));
    fs::write(&cfg, text.replace(&shin, &format!("shin = {missing:?}"))).unwrap();

    let out = run(&cfg, &["validate"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("no-such-embeddings.txt"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "colour = \"blue\"");
    assert_eq!(run(&cfg, &["validate"]).status.code(), Some(1));
}

#[test]
fn search_stack_evaluate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let root = run_dir(dir.path());

    let first = ok(&run(&cfg, &["search"]));
    assert!(root.join("results.jsonl").is_file());
    assert_eq!(fs::read_dir(root.join("ensembles")).unwrap().count(), 2);
    assert_eq!(fs::read_dir(root.join("models")).unwrap().count(), 4);
    let results = fs::read(root.join("results.jsonl")).unwrap();
    let report = fs::read(root.join("report.json")).unwrap();

    // A rerun over a completed search retrains nothing.
    let second = ok(&run(&cfg, &["search"]));
    assert_eq!(first, second);
    assert_eq!(fs::read(root.join("results.jsonl")).unwrap(), results);
    assert_eq!(fs::read(root.join("report.json")).unwrap(), report);

    ok(&run(&cfg, &["stack"]));
    let top1 = root.join("stacks").join("top-1.json");
    assert!(top1.is_file() && root.join("stacks").join("top-2.json").is_file());
    assert_eq!(run(&cfg, &["--top-k", "0", "stack"]).status.code(), Some(1));
    let too_many = run(&cfg, &["--top-k", "3", "stack"]);
    assert!(!too_many.status.success());
    assert!(stderr(&too_many).contains('3'), "{}", stderr(&too_many));

    // K = 1 evaluates exactly like its single ensemble.
    let train = synthetic_dir().join("train.tsv");
    ok(&run(&cfg, &["evaluate", "--stack", top1.to_str().unwrap(), "--data", train.to_str().unwrap()]));
    let cli_report: MetricReport =
        serde_json::from_slice(&fs::read(root.join("stacks").join("top-1.eval.json")).unwrap()).unwrap();
    let stack = load_stack::<f32>(&top1).unwrap();
    let corpus = synthetic_corpus();
    let pred: Vec<Class> = (0..corpus.len())
        .map(|i| classify(&fold_ensemble_predict(&stack.members[0], &corpus.item(i)).unwrap()))
        .collect();
    assert_eq!(cli_report, MetricReport::evaluate(corpus.labels(), &pred).unwrap());

    // predictions: one line per input, probabilities rounded to 6 places
    let preds = dir.path().join("pred.tsv");
    let args = ["predict", "--stack", top1.to_str().unwrap(), "--input", train.to_str().unwrap()];
    ok(&run(&cfg, &[&args[..], &["--out", preds.to_str().unwrap()]].concat()));
    let content = fs::read_to_string(&preds).unwrap();
    let examples = synthetic_examples();
    assert_eq!(content.lines().count(), examples.len());
    for (line, ex) in content.lines().zip(&examples) {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 5);
        assert_eq!(f[0], ex.id);
        let p: Vec<f64> = f[2..].iter().map(|s| s.parse().unwrap()).collect();
        assert!(f[2..].iter().all(|s| s.split('.').nth(1).map(str::len) == Some(6)));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-5, "{line}");
        assert_eq!(f[1], classify(&[p[0], p[1], p[2]]).to_string());
    }
    let again = dir.path().join("pred2.tsv");
    ok(&run(&cfg, &[&args[..], &["--out", again.to_str().unwrap()]].concat()));
    assert_eq!(fs::read(&again).unwrap(), content.as_bytes());

    let empty = dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let empty_out = dir.path().join("empty.pred");
    let args = ["predict", "--stack", top1.to_str().unwrap(), "--input", empty.to_str().unwrap()];
    ok(&run(&cfg, &[&args[..], &["--out", empty_out.to_str().unwrap()]].concat()));
    assert_eq!(fs::read(&empty_out).unwrap(), b"");

    // A missing member model is reported by name.
    let member = fs::read_dir(root.join("models")).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(&member).unwrap();
    let top2 = root.join("stacks").join("top-2.json");
    let out = run(&cfg, &["evaluate", "--stack", top2.to_str().unwrap(), "--data", train.to_str().unwrap()]);
    assert!(!out.status.success());
    let name = member.file_name().unwrap().to_str().unwrap();
    assert!(stderr(&out).contains(name), "{}", stderr(&out));
}

#[test]
fn ablation_writes_its_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let stdout = ok(&run(&cfg, &["--jobs", "2", "ablate-filters", "--sizes", "1,2", "--runs", "2"]));
    assert!(!stdout.is_empty());
    let tsv = fs::read_to_string(run_dir(dir.path()).join("ablation.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3, "{tsv}");
    assert!(run_dir(dir.path()).join("ablation.txt").is_file());
    let out = run(&cfg, &["ablate-filters", "--runs", "1"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}
