use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use vocalsense::analytics::SentimentDistribution;
use vocalsense::pipeline::AnalysisReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vocalsense"));
    c.env_remove("VOCALSENSE_SEED");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let o = run(args, cwd);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_1_and_runtime_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["analyze", "--input", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage:"));
    assert_eq!(run(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(run(&["synth", "--profile", "sleepy", "--count", "1", "--out", "d"], tmp.path()).status.code(), Some(1));
    assert_eq!(run(&["compare", "--a", "a.json", "--b", "b.json"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["synth", "--profile", "stressed", "--count", "0", "--out", "d"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn synth_is_reproducible_and_seed_sources_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["synth", "--profile", "stressed", "--count", "10", "--out", "a", "--seed", "7"], p);
    ok(&["synth", "--profile", "stressed", "--count", "10", "--out", "b", "--seed", "7", "--workers", "4"], p);
    let o = bin().args(["synth", "--profile", "stressed", "--count", "10", "--out", "c"]).env("VOCALSENSE_SEED", "7").current_dir(p).output().unwrap();
    assert!(o.status.success());
    ok(&["synth", "--profile", "stressed", "--count", "10", "--out", "d", "--seed", "8"], p);
    let a = tree(&p.join("a"));
    assert_eq!(a.len(), 12);
    assert_eq!(a, tree(&p.join("b")));
    assert_eq!(a, tree(&p.join("c")));
    assert_ne!(a, tree(&p.join("d")));
    // the flag wins over the environment
    let o = bin().args(["synth", "--profile", "stressed", "--count", "10", "--out", "e", "--seed", "7"]).env("VOCALSENSE_SEED", "99").current_dir(p).output().unwrap();
    assert!(o.status.success());
    assert_eq!(a, tree(&p.join("e")));
}

#[test]
fn analyze_then_compare_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    ok(&["synth", "--profile", "stressed", "--count", "2", "--out", "d", "--seed", "1"], p);
    std::fs::write(p.join("cfg.json"), r#"{"segments": 8, "report": {"top_n": 5}}"#).unwrap();
    ok(&["analyze", "--config", "cfg.json", "--input", "d/stressed", "--out", "o1", "--seed", "3", "--workers", "1"], p);
    ok(&["analyze", "--config", "cfg.json", "--input", "d/stressed", "--out", "o2", "--seed", "3", "--workers", "8"], p);
    let r1 = std::fs::read(p.join("o1/report.json")).unwrap();
    assert_eq!(r1, std::fs::read(p.join("o2/report.json")).unwrap());
    let report = AnalysisReport::from_json(std::str::from_utf8(&r1).unwrap()).unwrap();
    assert_eq!(report.seed, 3);
    assert_eq!(report.files[0].segments.len(), 8);
    assert!(report.aggregates.characters.len() <= 5);

    let mut pre = report.clone();
    pre.aggregates.sentiment = Some(SentimentDistribution::from_counts([46, 59, 45]).unwrap());
    let mut post = report.clone();
    post.aggregates.sentiment = Some(SentimentDistribution::from_counts([48, 58, 44]).unwrap());
    pre.save(p.join("pre.json")).unwrap();
    post.save(p.join("post.json")).unwrap();
    let o = ok(&["compare", "--a", "pre.json", "--b", "post.json", "--embed", "post_cmp.json"], p);
    let delta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(delta["sentiment"]["negative_pct"], 1.3);
    assert_eq!(delta["sentiment"]["neutral_pct"], -0.6);
    assert_eq!(delta["sentiment"]["positive_pct"], -0.7);
    let embedded = AnalysisReport::load(p.join("post_cmp.json")).unwrap();
    assert_eq!(embedded.comparison.unwrap().sentiment.unwrap().neutral_pct, -0.6);

    std::fs::write(p.join("curve.csv"), "epoch,train_loss,val_loss,train_acc,val_acc\n1,1,1,0.5,0.5\n2,0.5,0.6,0.8,0.7\n").unwrap();
    ok(&["plot", "--report", "pre.json", "--out", "plots", "--curves", "curve.csv"], p);
    let sentiment = std::fs::read_to_string(p.join("plots/sentiment.csv")).unwrap();
    assert_eq!(sentiment, "label,percent\nnegative,30.7\nneutral,39.3\npositive,30.0\n");
    assert!(p.join("plots/training_curves.svg").exists());
}

#[test]
fn config_file_seed_and_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    std::fs::write(p.join("bad.json"), r#"{"segments": 0}"#).unwrap();
    assert_eq!(run(&["analyze", "--config", "bad.json", "--out", "o"], p).status.code(), Some(2));
    std::fs::write(p.join("typo.json"), r#"{"segmnts": 3}"#).unwrap();
    assert_eq!(run(&["analyze", "--config", "typo.json", "--out", "o"], p).status.code(), Some(2));
    std::fs::write(p.join("seeded.json"), r#"{"seed": 5, "training": {"classifier": {"epochs": 1}}}"#).unwrap();
    ok(&["synth", "--config", "seeded.json", "--profile", "healthy", "--count", "2", "--out", "x"], p);
    ok(&["synth", "--seed", "5", "--profile", "healthy", "--count", "2", "--out", "y"], p);
    assert_eq!(tree(&p.join("x")), tree(&p.join("y")));
}
