use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lrptext::attribution::Method;
use lrptext::blackbox::{predict_corpus, LinearModel, LossKind};
use lrptext::corpus::{load_corpus, CorpusFormat, LoadOptions};
use lrptext::embeddings::load_embeddings;
use lrptext::PipelineConfig;

fn lrptext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrptext"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, methods: Vec<Method>) -> PathBuf {
    let mut c = PipelineConfig::default();
    c.paths.workdir = dir.join("work");
    c.synth.n_train = 300;
    c.synth.n_eval = 300;
    c.synth.n_mild = 30;
    c.synth.n_neutral = 60;
    c.cnn.epochs = 2;
    c.explain.methods = methods;
    c.report.min_count = 3;
    c.report.deletion_steps = vec![0, 5, 10];
    c.report.ngram_min_count = 2;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn synth_two_documents() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("w");
    let w = work.to_str().unwrap();
    ok(lrptext(&["synth", "--workdir", w, "--n-train", "2", "--n-eval", "2"]));
    let train = fs::read_to_string(work.join("train.csv")).unwrap();
    assert_eq!(train.lines().count(), 3, "{train}");
    assert!(train.starts_with("id,text,label\n"));
    assert!(work.join("manifest.json").is_file());
}

#[test]
fn synth_same_seed_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for w in [&a, &b] {
        ok(lrptext(&["synth", "--seed", "7", "--workdir", w.to_str().unwrap(), "--n-train", "50", "--n-eval", "10"]));
    }
    for f in ["train.csv", "eval.csv", "embeddings.txt", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_embeddings_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("nothing-here");
    let o = lrptext(&["train-blackbox", "--workdir", w.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("embeddings.txt") && err.contains("train.csv"), "{err}");
    assert!(!w.exists(), "validation failure must not create the workdir");
}

#[test]
fn unknown_method_is_a_usage_error() {
    let o = lrptext(&["explain", "--method", "shap"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("shap"));
    let o = lrptext(&["explain", "--method", "lrp", "--split", "test"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_lists_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"cnn": {"dim": 0, "pad_len": 4, "filter_sizes": [9], "filters_per_size": 2, "dropout_rate": 0.1, "seed": 0, "epochs": 1, "batch_size": 1, "learning_rate": 0.1}}"#).unwrap();
    let o = lrptext(&["synth", "--config", path.to_str().unwrap(), "--workdir", dir.path().join("w").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("cnn.dim") && err.contains("filter size 9"), "{err}");
    fs::write(&path, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(lrptext(&["synth", "--config", path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn empty_positive_set_gives_empty_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), vec![Method::Permutation]);
    let c = config.to_str().unwrap();
    ok(lrptext(&["synth", "--config", c]));
    let work = dir.path().join("work");
    // a black box that never predicts class 1
    LinearModel::new(vec![0.0; 16], -10.0, LossKind::Logistic, None)
        .save(&work.join("blackbox.json"))
        .unwrap();
    ok(lrptext(&["explain", "--config", c, "--method", "permutation"]));
    assert_eq!(fs::read_to_string(work.join("explain_permutation_eval.jsonl")).unwrap(), "");
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), vec![Method::Lrp]);
    let c = config.to_str().unwrap();
    let work = dir.path().join("work");

    ok(lrptext(&["synth", "--config", c]));
    let out = ok(lrptext(&["train-blackbox", "--config", c]));
    assert!(out.contains("eval split") && out.contains("F1"), "{out}");
    let first = fs::read(work.join("blackbox.json")).unwrap();
    ok(lrptext(&["train-blackbox", "--config", c]));
    assert_eq!(fs::read(work.join("blackbox.json")).unwrap(), first);

    let o = lrptext(&["explain", "--config", c, "--method", "lrp"]);
    assert_eq!(o.status.code(), Some(1), "surrogate checkpoint is required");
    assert!(stderr(&o).contains("surrogate.json"));

    let out = ok(lrptext(&["train-surrogate", "--config", c, "--workers", "1"]));
    assert!(out.contains("surrogate vs. black-box labels") && out.contains("surrogate vs. actual labels"));

    ok(lrptext(&["explain", "--config", c, "--method", "lrp", "--split", "eval"]));
    let table = load_embeddings(&work.join("embeddings.txt"), None).unwrap();
    let eval = load_corpus(&work.join("eval.csv"), CorpusFormat::Csv, LoadOptions::default()).unwrap();
    let model = LinearModel::load(&work.join("blackbox.json")).unwrap();
    let positives = predict_corpus(&model, &eval, &table).iter().filter(|p| p.label == 1).count();
    let jsonl = fs::read_to_string(work.join("explain_lrp_eval.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), positives);

    ok(lrptext(&["explain", "--config", c, "--method", "lrp", "--doc-id", "eval-001", "--html"]));
    let html = fs::read_to_string(work.join("explain_lrp_eval_eval-001.html")).unwrap();
    assert!(html.starts_with("<!DOCTYPE html>") && html.contains("eval-001"));
    let o = lrptext(&["explain", "--config", c, "--method", "lrp", "--doc-id", "nope"]);
    assert_eq!(o.status.code(), Some(1));

    let out = ok(lrptext(&["report", "--config", c]));
    assert!(out.contains("report bundle"), "{out}");
    let corr = fs::read_to_string(work.join("correlation.csv")).unwrap();
    assert_eq!(corr, "label,lrp/eval\nlrp/eval,1\n");
    let bundle: Vec<String> = ["index.html", "importance_lrp_eval.csv", "deletion_curves.csv", "top_tokens_eval.csv", "cases_false_positive.html", "cases_false_negative.html", "ngram2_lrp_eval.csv"]
        .map(String::from)
        .to_vec();
    let before: Vec<Vec<u8>> = bundle.iter().map(|f| fs::read(work.join(f)).unwrap()).collect();
    ok(lrptext(&["report", "--config", c]));
    for (f, b) in bundle.iter().zip(&before) {
        assert_eq!(&fs::read(work.join(f)).unwrap(), b, "{f} changed on regeneration");
    }
    let deletion = fs::read_to_string(work.join("deletion_curves.csv")).unwrap();
    assert_eq!(deletion.lines().count(), 1 + 3 + 3);

    let out = ok(lrptext(&["oov-report", "--config", c]));
    assert!(out.contains("train: OOV rate 0.0000"), "{out}");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(work.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "lrptext");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["stages"]["report"]["index.html"].is_string());
}

#[test]
fn report_without_explanations_enumerates_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), vec![Method::Permutation, Method::Gbsa]);
    let c = config.to_str().unwrap();
    ok(lrptext(&["synth", "--config", c]));
    ok(lrptext(&["train-blackbox", "--config", c]));
    let o = lrptext(&["report", "--config", c]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for f in ["explain_permutation_train.jsonl", "explain_permutation_eval.jsonl", "explain_gbsa_eval.jsonl", "surrogate.json"] {
        assert!(err.contains(f), "{f} not in {err}");
    }
}

#[test]
fn oov_skip_flag_reaches_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), vec![Method::Permutation]);
    let c = config.to_str().unwrap();
    ok(lrptext(&["synth", "--config", c]));
    ok(lrptext(&["train-blackbox", "--config", c, "--oov-skip"]));
    let model = LinearModel::load(&dir.path().join("work/blackbox.json")).unwrap();
    assert_eq!(model.oov_mode, lrptext::embeddings::OovMode::Skip);
}
