use std::path::Path;
use std::process::{Command, Output};

use dfl_core::model::read_model;

fn dfl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixture() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/criteo_sample.tsv")
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&dfl(&["synth-gen", "--seed", "4", "--eta", "1", "--out", "syn", "--samples-per-day", "200"], p));
    for f in ["train.tsv", "test.tsv", "params.txt"] {
        assert!(p.join("syn").join(f).exists());
    }
    for method in ["oracle", "bl", "tw", "putw", "pnutw", "fsiw", "convdf", "nndf"] {
        let model = format!("{method}.model");
        ok(&dfl(
            &["train", "--method", method, "--lambda", "0.001", "--epochs", "40", "--data", "syn", "--model-out", &model],
            p,
        ));
        let csv = ok(&dfl(&["eval", "--model", &model, "--test", "syn/test.tsv", "--format", "csv"], p));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,n,nll,acc,auc_pr");
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols[0], method);
        assert_eq!(cols[1], "200");
        assert!(cols[2..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn dfm_model_file_has_both_parts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&dfl(&["synth-gen", "--seed", "5", "--eta", "0", "--out", "syn", "--samples-per-day", "150"], p));
    let out = ok(&dfl(
        &["train", "--method", "dfm", "--lambda", "auto", "--draws", "2", "--epochs", "30", "--data", "syn", "--model-out", "dfm.model"],
        p,
    ));
    assert!(out.contains("method=dfm"));
    let file = read_model(std::io::BufReader::new(std::fs::File::open(p.join("dfm.model")).unwrap())).unwrap();
    let names: Vec<&str> = file.sections.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["cvr", "hazard"]);
    ok(&dfl(&["eval", "--model", "dfm.model", "--test", "syn/test.tsv"], p));
}

#[test]
fn configuration_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&dfl(&["synth-gen", "--seed", "1", "--eta", "0", "--out", "syn", "--samples-per-day", "50"], p));
    let cases: &[&[&str]] = &[
        &["train", "--method", "nope", "--data", "syn", "--model-out", "m"],
        &["train", "--method", "bl", "--lambda", "-1", "--data", "syn", "--model-out", "m"],
        &["train", "--method", "bl", "--lambda", "lots", "--data", "syn", "--model-out", "m"],
        &["train", "--method", "bl", "--tau", "120", "--data", "syn", "--model-out", "m"],
        &["train", "--method", "bl", "--lr", "0", "--lambda", "0", "--data", "syn", "--model-out", "m"],
        &["synth-gen", "--seed", "1", "--eta", "-2", "--out", "bad"],
        &["sweep", "--trials", "0", "--out", "s.csv"],
        &["sweep", "--etas", "0,x", "--out", "s.csv"],
        &["sweep", "--methods", "bl,unknown", "--out", "s.csv"],
        &["eval", "--model", "m", "--test", "t", "--format", "json"],
        &["criteo-run", "--test-day", "5", "--days", "0", "--out", "c.csv"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = dfl(args, p);
        assert!(!out.status.success(), "expected failure for {args:?}");
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    // a missing input file is an error too, just not a configuration one
    let out = dfl(&["eval", "--model", "absent.model", "--test", "syn/test.tsv"], p);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn criteo_prep_and_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let stats = ok(&dfl(&["criteo-prep", "--in", fixture(), "--out", "prep"], p));
    assert!(stats.contains("written = 1000"));
    assert!(p.join("prep/events.tsv").exists() && p.join("prep/stats.txt").exists());
    let csv = ok(&dfl(
        &["criteo-run", "--data", "prep", "--test-day", "25", "--methods", "bl", "--epochs", "1", "--out", "run.csv"],
        p,
    ));
    let written = std::fs::read_to_string(p.join("run.csv")).unwrap();
    assert_eq!(csv, written);
    let lines: Vec<&str> = written.lines().collect();
    assert_eq!(lines[0], "method,test_day,tau_hours,nll,acc,auc_pr,status");
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols[..3], ["bl", "25", "168"]);
    assert!(cols[3..6].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    assert_eq!(cols[6], "ok");
}

#[test]
fn sweep_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&dfl(
        &[
            "sweep", "--etas", "0,2", "--trials", "2", "--methods", "oracle,bl", "--tau", "24", "--lambda", "calibrated",
            "--draws", "2", "--epochs", "30", "--samples-per-day", "100", "--out", "s.csv", "--summary", "sum.csv",
        ],
        p,
    ));
    let rows = std::fs::read_to_string(p.join("s.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("method,eta,trial,nll,acc,auc_pr,rll,status"));
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 2);
    let summary = std::fs::read_to_string(p.join("sum.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("oracle,0,2,0,0,0,")));
}
