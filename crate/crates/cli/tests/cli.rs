use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sant_core::harness::{read_events_jsonl, read_report, read_summary_csv};
use sant_core::{ExperimentConfig, Method, PostHoc};

fn sant(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sant"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn no_arguments_prints_the_synopsis() {
    let dir = tempfile::tempdir().unwrap();
    let out = sant(&[], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage: sant"), "{err}");
    for verb in ["ingest", "simulate", "sweep", "serve", "report", "synth"] {
        assert!(err.contains(verb), "{verb} missing from synopsis");
    }
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sant(&["simulate", "--dataset", "d", "--out", "o", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = sant(&["simulate", "--dataset", "d", "--out", "o", "--budget", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = sant(&["simulate", "--dataset", "d", "--out", "o", "--method", "oracle"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = sant(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = sant(&["simulate", "--dataset", "missing", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = sant(&["report", "--dir", "missing"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(sant(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn simulate_all_human_limit() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sant(&["synth", "--kind", "gaussian", "--n", "10", "--hard-frac", "0.2", "--out", "d10"], dir.path()));
    ok(&sant(
        &["simulate", "--dataset", "d10", "--method", "sant", "--budget", "1.0", "--seed", "3", "--out", "run"],
        dir.path(),
    ));
    let rows = read_summary_csv(dir.path().join("run/summary.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].quality_overall, Some(1.0));
    assert_eq!(rows[0].human, 10);
    assert_eq!(rows[0].model, 0);
    let events = read_events_jsonl(dir.path().join("run/events.jsonl")).unwrap();
    assert!(!events.is_empty());

    let printed = ok(&sant(&["report", "--dir", "run"], dir.path()));
    let mut lines = printed.lines();
    assert!(lines.next().unwrap().starts_with("method"));
    assert!(lines.next().unwrap().contains("1.0000"));
}

#[test]
fn sweep_over_nine_budgets_emits_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sant(&["synth", "--n", "120", "--seed", "1", "--out", "d"], dir.path()));
    ok(&sant(
        &["sweep", "--dataset", "d", "--methods", "random", "--budgets", "0.1..0.9:0.1", "--out", "sw"],
        dir.path(),
    ));
    let text = fs::read_to_string(dir.path().join("sw/summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 9);
    let rows = read_summary_csv(dir.path().join("sw/summary.csv")).unwrap();
    let fractions: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
    assert_eq!(fractions, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
    for r in &rows {
        assert_eq!(r.budget, (r.fraction * 120.0 + 1e-9).floor() as usize);
    }

    // Methods x budgets x seeds, and --jobs does not change the result.
    ok(&sant(
        &["sweep", "--dataset", "d", "--methods", "random,maxent", "--budgets", "0.2,0.4", "--seeds", "2", "--out", "a"],
        dir.path(),
    ));
    ok(&sant(
        &[
            "sweep", "--dataset", "d", "--methods", "random,maxent", "--budgets", "0.2,0.4", "--seeds", "2", "--jobs", "3",
            "--out", "b",
        ],
        dir.path(),
    ));
    let a = read_summary_csv(dir.path().join("a/summary.csv")).unwrap();
    assert_eq!(a.len(), 8);
    assert_eq!(a, read_summary_csv(dir.path().join("b/summary.csv")).unwrap());

    let out = sant(&["sweep", "--dataset", "d", "--budget-count", "5", "--out", "c"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_round_trip_into_the_report_config() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sant(&["synth", "--n", "80", "--seed", "2", "--out", "d"], dir.path()));
    ok(&sant(
        &[
            "simulate", "--dataset", "d", "--method", "maxent-cal", "--budget", "0.4", "--budget-count", "30", "--warmup",
            "6", "--batch-size", "12", "--seed", "9", "--post-hoc", "retrain+reannotate", "--sant-al", "ent-gn",
            "--temperature", "2.5", "--retrain-epochs", "4", "--checkpoint-every", "7", "--out", "r",
        ],
        dir.path(),
    ));
    let report = read_report(dir.path().join("r/report.json")).unwrap();
    let expected = ExperimentConfig {
        method: Method::MaxentCal,
        budget_fraction: 0.4,
        budget_count: Some(30),
        warmup_count: Some(6),
        batch_size: 12,
        seed: 9,
        post_hoc: PostHoc::RetrainReannotate,
        sant_al: "ent-gn".parse().unwrap(),
        temperature: 2.5,
        retrain_epochs: 4,
        checkpoint_every: 7,
        ..ExperimentConfig::default()
    };
    assert_eq!(report.config, expected);
    assert_eq!(report.budget, 30);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sant(&["synth", "--n", "60", "--seed", "4", "--out", "d"], dir.path()));
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"method": "random", "seed": 42, "eat": {"k": 5}, "model": {"learning_rate": 0.1}}"#,
    )
    .unwrap();
    ok(&sant(
        &["simulate", "--dataset", "d", "--method", "sant", "--seed", "1", "--batch-size", "16", "--config", "cfg.json", "--out", "r"],
        dir.path(),
    ));
    let c = read_report(dir.path().join("r/report.json")).unwrap().config;
    assert_eq!(c.method, Method::Random);
    assert_eq!(c.seed, 42);
    assert_eq!(c.batch_size, 16, "flags not named in the file are kept");
    assert_eq!(c.eat.k, 5);
    assert_eq!(c.eat.margin, ExperimentConfig::default().eat.margin);
    assert_eq!(c.model.learning_rate, 0.1);

    fs::write(dir.path().join("bad.json"), r#"{"methd": "random"}"#).unwrap();
    let out = sant(&["simulate", "--dataset", "d", "--config", "bad.json", "--out", "r2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("methd"));
}

#[test]
fn ingest_validates_and_stores() {
    let dir = tempfile::tempdir().unwrap();
    ok(&sant(&["synth", "--n", "30", "--classes", "3", "--dim", "4", "--out", "raw.jsonl"], dir.path()));
    let printed = ok(&sant(&["ingest", "--in", "raw.jsonl", "--out", "ds"], dir.path()));
    assert!(printed.contains("30 items"), "{printed}");
    assert!(printed.contains("multiclass"), "{printed}");
    ok(&sant(&["simulate", "--dataset", "ds", "--method", "random", "--budget", "0.5", "--out", "r"], dir.path()));
    let report = read_report(dir.path().join("r/report.json")).unwrap();
    assert_eq!(report.dataset_size, 30);
    assert_eq!(report.task.num_classes, 3);

    fs::write(dir.path().join("unlabeled.jsonl"), "{\"id\":\"a\",\"features\":[1.0]}\n{\"id\":\"b\",\"features\":[2.0]}\n").unwrap();
    let out = sant(&["ingest", "--in", "unlabeled.jsonl", "--out", "u"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    ok(&sant(&["ingest", "--in", "unlabeled.jsonl", "--out", "u", "--task", "binary"], dir.path()));
    let out = sant(&["simulate", "--dataset", "u", "--out", "r3"], dir.path());
    assert_eq!(out.status.code(), Some(2), "simulation needs ground truth");

    fs::write(dir.path().join("dup.jsonl"), "{\"id\":\"a\",\"features\":[1.0],\"label\":0}\n{\"id\":\"a\",\"features\":[2.0],\"label\":1}\n").unwrap();
    assert_eq!(sant(&["ingest", "--in", "dup.jsonl", "--out", "x"], dir.path()).status.code(), Some(2));
}
