use std::fs;
use std::path::Path;

use assert_cmd::Command;
use serde_json::Value;
use tempfile::tempdir;

fn bin() -> Command {
    Command::cargo_bin("weavecache").unwrap()
}

fn stdout_of(args: &[&str]) -> String {
    let out = bin()
        .args(args)
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    String::from_utf8(out).unwrap()
}

fn generate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["generate", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    bin().args(&args).assert().success();
}

/// Metric columns of a one-row CSV output, without the wall-clock column.
fn metric_columns(csv: &str) -> Vec<String> {
    let row = csv.lines().nth(1).unwrap();
    let mut cols: Vec<String> = row.split(',').map(str::to_owned).collect();
    cols.pop();
    cols
}

fn sweep_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    generate(a.path(), &["--seed", "11", "--frames", "200"]);
    generate(b.path(), &["--seed", "11", "--frames", "200"]);
    for f in ["stream.jsonl", "queries.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn missing_required_flag_is_usage_error() {
    bin().arg("generate").assert().code(2);
    bin().args(["sweep", "--deltas"]).assert().code(2);
    bin().arg("no-such-command").assert().code(2);
}

#[test]
fn invalid_dimension_is_domain_error() {
    let dir = tempdir().unwrap();
    let out = bin()
        .args([
            "generate",
            "--out",
            dir.path().to_str().unwrap(),
            "--dim",
            "1",
        ])
        .assert()
        .code(1)
        .get_output()
        .stderr
        .clone();
    let msg = String::from_utf8(out).unwrap();
    assert!(msg.contains("dim must be at least 2"), "{msg}");
}

#[test]
fn sentinel_policies_match_gated_thresholds() {
    let dir = tempdir().unwrap();
    generate(
        dir.path(),
        &["--seed", "5", "--frames", "300", "--queries", "40"],
    );
    let input = dir.path().to_str().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["simulate", "--input", input];
        args.extend_from_slice(extra);
        metric_columns(&stdout_of(&args))
    };
    assert_eq!(
        run(&["--policy", "local_only"]),
        run(&["--policy", "gated", "--delta", "inf"])
    );
    let always = run(&["--policy", "always_recall"]);
    let zero = run(&["--policy", "gated", "--delta", "0"]);
    assert_eq!(always[1..], zero[1..]);
    assert_eq!(always[4], "1");
}

#[test]
fn sweep_costs_fall_as_threshold_rises() {
    let csv = stdout_of(&[
        "sweep",
        "--deltas",
        "0,0.2,0.6,1.2,inf",
        "--frames",
        "300",
        "--queries",
        "40",
        "--seed",
        "2",
    ]);
    let rows = sweep_rows(&csv);
    assert_eq!(rows.len(), 5);
    for w in rows.windows(2) {
        assert!(w[1][3] <= w[0][3], "{csv}");
    }
    assert_eq!(rows[4][3], 0.0);
}

#[test]
fn sweep_drops_duplicate_thresholds() {
    let out = bin()
        .args([
            "sweep",
            "--deltas",
            "0.5,0.5,1",
            "--frames",
            "200",
            "--queries",
            "10",
        ])
        .assert()
        .success()
        .get_output()
        .clone();
    assert_eq!(sweep_rows(&String::from_utf8(out.stdout).unwrap()).len(), 2);
    assert!(String::from_utf8(out.stderr).unwrap().contains("duplicate"));
}

#[test]
fn sweep_writes_csv_file() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    bin()
        .args([
            "sweep",
            "--deltas",
            "0,inf",
            "--frames",
            "200",
            "--queries",
            "10",
        ])
        .args(["--out", path.to_str().unwrap()])
        .assert()
        .success();
    let csv = fs::read_to_string(path).unwrap();
    assert!(csv.starts_with("delta,recall_at_k,answer_accuracy,"));
    assert_eq!(sweep_rows(&csv).len(), 2);
}

#[test]
fn trace_file_has_one_line_per_query() {
    let dir = tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    bin()
        .args(["simulate", "--frames", "200", "--queries", "12"])
        .args(["--trace", trace.to_str().unwrap()])
        .assert()
        .success();
    let text = fs::read_to_string(trace).unwrap();
    assert_eq!(text.lines().count(), 12);
    for line in text.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

#[test]
fn json_output_reports_threshold() {
    let out = stdout_of(&[
        "--json",
        "simulate",
        "--policy",
        "local_only",
        "--frames",
        "200",
        "--queries",
        "5",
    ]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["delta"], "inf");
    assert_eq!(v["metrics"]["recall_trigger_rate"], 0.0);
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[gate]\ndelta_nats = 1e9\n[stream]\nn_frames = 200\nn_queries = 8\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let never = stdout_of(&["--config", cfg, "simulate"]);
    assert_eq!(metric_columns(&never)[4], "0");
    let always = stdout_of(&["--config", cfg, "simulate", "--delta", "0"]);
    assert_eq!(metric_columns(&always)[4], "1");

    fs::write(dir.path().join("bad.toml"), "[gate]\nthreshold = 1\n").unwrap();
    bin()
        .args([
            "--config",
            dir.path().join("bad.toml").to_str().unwrap(),
            "simulate",
        ])
        .assert()
        .code(1);
}

fn shuffle_into(dir: &Path, group: &str, examples: &str) -> Vec<Value> {
    let stream = dir.join("stream.jsonl");
    let out = dir.join("sope.jsonl");
    bin()
        .args([
            "shuffle",
            "--in",
            stream.to_str().unwrap(),
            "--group",
            group,
        ])
        .args(["--examples", examples, "--out", out.to_str().unwrap()])
        .assert()
        .success();
    fs::read_to_string(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn grouped_shuffle_yields_one_slot_per_segment() {
    let dir = tempdir().unwrap();
    generate(
        dir.path(),
        &[
            "--frames",
            "16",
            "--events",
            "2",
            "--options",
            "2",
            "--queries",
            "2",
            "--window",
            "4",
            "--horizon",
            "current",
        ],
    );
    let records = shuffle_into(dir.path(), "4", "2");
    assert_eq!(records.len(), 2);
    for r in &records {
        assert_eq!(r["slots"].as_array().unwrap().len(), 4);
        assert_eq!(r["target_ranges"].as_array().unwrap().len(), 4);
        assert!(r["prompt"]
            .as_str()
            .unwrap()
            .starts_with("These video segments are shuffled."));
    }
}

#[test]
fn identity_predictions_score_perfectly() {
    let dir = tempdir().unwrap();
    generate(
        dir.path(),
        &["--frames", "60", "--queries", "4", "--window", "8"],
    );
    let records = shuffle_into(dir.path(), "1", "5");
    let preds: String = records
        .iter()
        .map(|r| format!("{{\"ranges\":{}}}\n", r["target_ranges"]))
        .collect();
    let pred = dir.path().join("pred.jsonl");
    fs::write(&pred, preds).unwrap();
    let truth = dir.path().join("sope.jsonl");
    let out = stdout_of(&[
        "--json",
        "eval-reorder",
        "--pred",
        pred.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]);
    let hist: Value = serde_json::from_str(out.trim()).unwrap();
    let bins = hist["bins"].as_array().unwrap();
    assert_eq!(bins.len(), 11);
    assert_eq!(bins[10], 5);
    assert!(bins[..10].iter().all(|b| b == 0));
    assert_eq!(hist["mean_exact_match"], 1.0);
}

#[test]
fn prediction_count_mismatch_is_domain_error() {
    let dir = tempdir().unwrap();
    generate(
        dir.path(),
        &[
            "--frames",
            "40",
            "--queries",
            "4",
            "--window",
            "8",
            "--horizon",
            "current",
        ],
    );
    let records = shuffle_into(dir.path(), "1", "2");
    let pred = dir.path().join("pred.jsonl");
    fs::write(
        &pred,
        format!("{{\"ranges\":{}}}\n", records[0]["target_ranges"]),
    )
    .unwrap();
    bin()
        .args(["eval-reorder", "--pred", pred.to_str().unwrap()])
        .args(["--truth", dir.path().join("sope.jsonl").to_str().unwrap()])
        .assert()
        .code(1);
}

#[test]
fn bench_reports_cheaper_two_stage_retrieval() {
    let out = stdout_of(&["bench", "--frames", "1000"]);
    let ops: Vec<u64> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(ops[0], 1000);
    assert!(ops[1] < ops[2]);
    assert_eq!(ops[2], 1000 * 8 * 8);
}
