use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const REPORTS: [&str; 5] = [
    "forecasts.csv",
    "scores_by_state.csv",
    "scores_summary.csv",
    "ensemble_selection.csv",
    "coverage.csv",
];

fn argocast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_argocast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small synthetic world (6 states, 80 weeks) with its config.json.
fn world(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    ok(&argocast(&["synth", "--states", "6", "--queries", "10", "--out", d]));
    dir.join("config.json").to_str().unwrap().to_string()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn synth_then_forecast_writes_every_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = world(tmp.path());
    let out = tmp.path().join("out");
    ok(&argocast(&["--config", &cfg, "--jobs", "2", "forecast"]));
    for f in REPORTS.iter().chain(&["lag_table.csv", "coefficients.csv", "run_metadata.json"]) {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!out.join(".staging").exists());
    let forecasts = String::from_utf8(read(&out.join("forecasts.csv"))).unwrap();
    for m in ["ARGO,", "ARGOX_2STEP,", "ARGOX_NATCONSTRAINT,", "NAIVE,", "ENSEMBLE,"] {
        assert!(forecasts.contains(m), "no {m} rows");
    }

    let report = argocast(&["--config", &cfg, "report"]);
    ok(&report);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("scores_summary.csv") && text.contains("ENSEMBLE"));
}

#[test]
fn missing_truth_feed_exits_two_and_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = world(tmp.path());
    let truth = tmp.path().join("truth_states.csv");
    fs::remove_file(&truth).unwrap();
    let out = argocast(&["--config", &cfg, "forecast"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("truth_states.csv"), "stderr: {err}");
    assert!(!tmp.path().join("out").join("forecasts.csv").exists());
}

#[test]
fn evaluate_reproduces_forecast_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = world(tmp.path());
    let out = tmp.path().join("out");
    ok(&argocast(&["--config", &cfg, "forecast"]));
    let before: Vec<Vec<u8>> = REPORTS[1..].iter().map(|f| read(&out.join(f))).collect();
    for f in &REPORTS[1..] {
        fs::remove_file(out.join(f)).unwrap();
    }
    ok(&argocast(&["--config", &cfg, "evaluate"]));
    for (f, b) in REPORTS[1..].iter().zip(&before) {
        assert_eq!(&read(&out.join(f)), b, "{f} differs");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = world(tmp.path());
    let out = tmp.path().join("out");
    ok(&argocast(&["--config", &cfg, "--jobs", "1", "forecast"]));
    let files = [&REPORTS[..], &["lag_table.csv", "coefficients.csv", "run_metadata.json"]].concat();
    let first: Vec<Vec<u8>> = files.iter().map(|f| read(&out.join(f))).collect();
    ok(&argocast(&["--config", &cfg, "--jobs", "3", "forecast"]));
    for (f, b) in files.iter().zip(&first) {
        if *f == "run_metadata.json" {
            // Records the thread count; everything else must match.
            let strip = |v: &[u8]| -> String {
                String::from_utf8_lossy(v)
                    .lines()
                    .filter(|l| !l.trim_start().starts_with("\"jobs\""))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&read(&out.join(f))), strip(b));
        } else {
            assert_eq!(&read(&out.join(f)), b, "{f} differs");
        }
    }
}

#[test]
fn stage_commands_run_on_their_own() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = world(tmp.path());
    let check = argocast(&["--config", &cfg, "ingest-check"]);
    ok(&check);
    assert!(String::from_utf8_lossy(&check.stdout).contains("truth feed"));
    ok(&argocast(&["--config", &cfg, "preprocess"]));
    assert!(tmp.path().join("out").join("cache").is_dir());
    let sel = argocast(&["--config", &cfg, "select-features"]);
    ok(&sel);
    let table = String::from_utf8(read(&tmp.path().join("out").join("lag_table.csv"))).unwrap();
    assert!(table.lines().count() > 1);
}

#[test]
fn report_without_outputs_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = argocast(&["--out", tmp.path().to_str().unwrap(), "report"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scores_summary.csv"));
}

#[test]
fn reversed_forecast_span_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = world(tmp.path());
    let mut v: serde_json::Value = serde_json::from_slice(&read(Path::new(&cfg))).unwrap();
    v["backtest"]["first_forecast"] = "2021-03-06".into();
    v["backtest"]["last_forecast"] = "2021-01-02".into();
    fs::write(&cfg, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    let out = argocast(&["--config", &cfg, "forecast"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("forecast dates"));
}
