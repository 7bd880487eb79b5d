use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsmt_core::corpus::read_contrastive;
use fsmt_core::lexicon::parse_annotated;
use serde_json::Value;

const ARTIFACTS: &[&str] = &[
    "lexicon.json",
    "lexicon_report.json",
    "annotated.tsv",
    "distribution.json",
    "checkpoint.fmt",
    "history.csv",
    "history.json",
    "trials.jsonl",
    "best_config.json",
];

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn write_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "contrastive": fixtures().join("contrastive.tsv"),
        "parallel": fixtures().join("parallel.tsv"),
        "model": {"seq_len": 8, "embed_dim": 16, "latent_dim": 32, "num_heads": 2},
        "train": {"epochs": 20, "batch_size": 8, "optimizer": "adam", "learning_rate": 0.003},
        "search": {
            "sequence_length": [8], "batch_size": [8, 16], "embed_dim": [8, 16],
            "latent_dim": [16, 32], "num_heads": [2, 3], "trial_budget": 2, "epochs_per_trial": 2
        }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn fsmt(work: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fsmt"));
    cmd.env_remove("FMT_MT_WORKDIR").arg("--work-dir").arg(work);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    lines[0].to_string()
}

fn run_pipeline(dir: &Path, seed: &str) -> PathBuf {
    let config = write_config(dir);
    let work = dir.join("work");
    for verb in ["extract-lexicon", "annotate", "train", "search"] {
        ok(fsmt(&work, Some(&config), &["--seed", seed, verb]));
    }
    work
}

#[test]
fn translate_without_checkpoint_fails_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = fsmt(&dir.path().join("work"), None, &["translate", "--text", "You eat."]);
    assert!(error_line(&out).starts_with("error[no-checkpoint]:"));
    let out = fsmt(&dir.path().join("work"), None, &["serve"]);
    assert!(error_line(&out).starts_with("error[no-checkpoint]:"));
}

#[test]
fn full_pipeline_runs_and_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let work_a = run_pipeline(a.path(), "11");
    let work_b = run_pipeline(b.path(), "11");
    for name in ARTIFACTS {
        let x = std::fs::read(work_a.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let y = std::fs::read(work_b.join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }

    let config = a.path().join("config.json");
    let formal = ok(fsmt(
        &work_a,
        Some(&config),
        &["translate", "--text", "You open the door.", "--beams", "3"],
    ));
    assert!(!formal.trim().is_empty());
    let metric: Value = serde_json::from_str(&ok(fsmt(&work_a, Some(&config), &["eval-metric"]))).unwrap();
    assert_eq!(metric["n"], 50);
    let masked: Value = serde_json::from_str(&ok(fsmt(&work_a, Some(&config), &["eval-masked", "--verbose"]))).unwrap();
    assert!(masked["total"].as_u64().unwrap() > 0);
    assert_eq!(masked["sentences"].as_array().unwrap().len(), 50);

    let history = std::fs::read_to_string(work_a.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 21);
    let trials = std::fs::read_to_string(work_a.join("trials.jsonl")).unwrap();
    let trial_count = trials.lines().filter(|l| l.contains("\"kind\":\"trial\"")).count();
    assert_eq!(trial_count, 2);
}

#[test]
fn eval_metric_on_formal_references_gives_full_formal_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let records = read_contrastive(fixtures().join("contrastive.tsv")).unwrap();
    let hyps: Vec<String> = records
        .iter()
        .map(|r| parse_annotated(&r.formal_ref_tagged).unwrap().plain_text)
        .collect();
    let hyp_path = dir.path().join("hyps.txt");
    std::fs::write(&hyp_path, hyps.join("\n") + "\n").unwrap();
    let contrastive = fixtures().join("contrastive.tsv");
    let args = [
        "eval-metric",
        "--contrastive",
        contrastive.to_str().unwrap(),
        "--hypotheses",
        hyp_path.to_str().unwrap(),
    ];
    let report: Value = serde_json::from_str(&ok(fsmt(&dir.path().join("work"), None, &args))).unwrap();
    assert_eq!(report["acc_f"], 1.0);
    assert_eq!(report["n"], 50);

    std::fs::write(&hyp_path, "only one line\n").unwrap();
    let out = fsmt(&dir.path().join("work"), None, &args);
    assert!(error_line(&out).starts_with("error[input]:"));
}

#[test]
fn config_and_input_errors_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let missing = dir.path().join("nope.json");
    let out = fsmt(&work, Some(&missing), &["extract-lexicon"]);
    assert!(error_line(&out).starts_with("error[missing-file]:"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"unknown_key": 1}"#).unwrap();
    assert!(error_line(&fsmt(&work, Some(&bad), &["extract-lexicon"])).starts_with("error[config]:"));

    let out = fsmt(&work, None, &["extract-lexicon"]);
    assert!(error_line(&out).starts_with("error[config]:"));
    let out = fsmt(
        &work,
        None,
        &["extract-lexicon", "--contrastive", missing.to_str().unwrap()],
    );
    assert!(error_line(&out).starts_with("error[missing-file]:"));
    let out = fsmt(&work, None, &["annotate", "--parallel", missing.to_str().unwrap()]);
    assert!(error_line(&out).starts_with("error[missing-file]:"));
}

#[test]
fn work_dir_defaults_to_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("from-env");
    let contrastive = fixtures().join("contrastive.tsv");
    let out = Command::new(env!("CARGO_BIN_EXE_fsmt"))
        .env("FMT_MT_WORKDIR", &work)
        .args(["extract-lexicon", "--contrastive", contrastive.to_str().unwrap()])
        .output()
        .unwrap();
    ok(out);
    assert!(work.join("lexicon.json").exists());
}
