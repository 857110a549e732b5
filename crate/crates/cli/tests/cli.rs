use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_clickpred");

const SMALL: &str = r#"
[paths]
events = "data/events.ndjson"
models = "data/models"
prediction_log = "data/predictions.ndjson"
out = "out"

[model]
epochs = 4

[search]
l2_lambda = [0.0001]
dropout_rate = [0.0]
gru_units = [16]
parallel = false

[lifecycle]
min_examples = 200
verification_sample_size = 200

[synth]
n_users = 2500
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().unwrap_or("null")).unwrap()
}

fn error(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap_or("null")).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["train", "--seed", "abc"]).status.code(), Some(2));
}

#[test]
fn train_on_empty_archive_reports_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = run(dir.path(), &["train", "--config", "small.toml"]);
    assert!(!out.status.success());
    assert_eq!(error(&out)["error"], "insufficient_data");
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[model]\nepochz = 3\n").unwrap();
    let out = run(dir.path(), &["generate", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert_eq!(error(&out)["error"], "config");
}

#[test]
fn generate_train_evaluate_calibrate_report_retrain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let cfg = ["--config", "small.toml", "--seed", "11"];

    let gen = run(d, &[&["generate"][..], &cfg].concat());
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let s = summary(&gen);
    assert_eq!(s["users"], 2500);
    assert!(s["purchases"].as_u64().unwrap() > 50);
    assert!(d.join("data/events.ndjson").exists());
    assert!(d.join("out/synthetic_users.ndjson").exists());

    let train = run(d, &[&["train"][..], &cfg].concat());
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let s = summary(&train);
    assert_eq!(s["result"]["outcome"], "deployed");
    assert_eq!(s["result"]["version_id"], "v0001");
    assert_eq!(std::fs::read_to_string(d.join("data/models/shop/ACTIVE")).unwrap().trim(), "v0001");

    let eval = run(d, &[&["evaluate"][..], &cfg].concat());
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let s = summary(&eval);
    assert!(s["auc"].as_f64().unwrap() > 0.75, "{s}");
    assert!(d.join("out/calibration_curve.tsv").exists());

    let cal = run(d, &[&["calibrate"][..], &cfg].concat());
    assert!(cal.status.success(), "{}", String::from_utf8_lossy(&cal.stderr));
    let s = summary(&cal);
    assert_eq!(s["result"]["version_id"], "v0002");
    assert!(s["eceAfter"].as_f64().unwrap().is_finite());

    let rep = run(d, &[&["report"][..], &cfg].concat());
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let s = summary(&rep);
    assert!(s["cohorts"]["engaged"]["count"].as_u64().is_some(), "{s}");
    assert!(d.join("out/cohorts.json").exists());
    assert!(d.join("out/cohort_engaged_calibration.tsv").exists());

    let re = run(d, &[&["retrain"][..], &cfg].concat());
    let (ok, s) = if re.status.success() { (true, summary(&re)["result"].clone()) } else { (false, error(&re)["detail"].clone()) };
    match s["outcome"].as_str().unwrap() {
        "deployed" => assert!(ok),
        "rejected" => assert!(!ok && s["reason"]["step"] == "validation", "{s}"),
        other => panic!("{other}: {s}"),
    }
}
