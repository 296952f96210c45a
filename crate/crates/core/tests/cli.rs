use std::io::Write;
use std::process::{Command, Output};

use bis_accountant::record::{RunRecord, RunResult};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bis-accountant"));
    cmd.env_remove("BIS_ACCOUNTANT_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn records(out: &Output) -> Vec<RunRecord> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|line| RunRecord::parse_line(line).unwrap())
        .collect()
}

fn estimate(record: &RunRecord) -> &bis_accountant::DeltaEstimate {
    match &record.result {
        RunResult::DeltaEstimate(e) => e,
        other => panic!("expected an estimate, got {other:?}"),
    }
}

#[test]
fn estimate_delta_single_iteration() {
    let out = run(&["estimate-delta", "--t", "1", "--k", "1", "--sigma", "1", "--epsilon", "1", "--samples", "400000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&out);
    assert_eq!(recs.len(), 1);
    let e = estimate(&recs[0]);
    assert!((e.point - 0.12694).abs() < 0.003, "{}", e.point);
    assert!(e.upper_bound >= e.point);
    assert!(recs[0].wall_time_seconds.is_some());
    assert!(recs[0].worker_count.is_some());
    assert_eq!(recs[0].config.samples, 400_000);
}

#[test]
fn missing_sigma_is_usage_error() {
    let out = run(&["estimate-delta", "--t", "1", "--k", "1", "--epsilon", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_configs_are_usage_errors() {
    for args in [
        &["estimate-delta", "--t", "1", "--k", "1", "--sigma", "1", "--epsilon", "1", "--samples", "10"][..],
        &["estimate-delta", "--t", "3", "--k", "4", "--sigma", "1", "--epsilon", "1"],
        &["estimate-delta", "--t", "3", "--k", "1", "--sigma", "-1", "--epsilon", "1"],
        &["find-sigma", "--t", "3", "--k", "1", "--epsilon", "1", "--mode", "lucky"],
        &["validate", "--max-t", "21"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn heuristic_sample_count_is_recorded() {
    let out = run(&["--reproducible", "estimate-delta", "--t", "4", "--k", "2", "--sigma", "2", "--epsilon", "1", "--delta", "1e-2"]);
    assert!(out.status.success());
    let rec = &records(&out)[0];
    assert_eq!(rec.config.samples, (50.0 * 100f64.ln() / 1e-2).ceil() as u64);
    assert!(rec.wall_time_seconds.is_none() && rec.worker_count.is_none());
}

#[test]
fn trivial_delta_returns_minimum_sigma() {
    let out = run(&["find-sigma", "--t", "10", "--k", "2", "--epsilon", "1", "--delta", "1.0"]);
    assert!(out.status.success());
    let rec = &records(&out)[0];
    match &rec.result {
        RunResult::NoiseSearch(r) => {
            assert_eq!(r.sigma, bis_accountant::search::MIN_SIGMA);
            assert!(r.note.is_some());
            assert!(r.trace.is_empty());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn find_sigma_optimistic_matches_gaussian_calibration() {
    let out = run(&[
        "--reproducible", "find-sigma", "--t", "1", "--k", "1", "--epsilon", "1", "--delta", "1e-2", "--mode", "optimistic",
        "--samples", "200000", "--seed", "9",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = &records(&out)[0];
    assert_eq!(rec.config.mode, Some(bis_accountant::SearchMode::Optimistic));
    match &rec.result {
        RunResult::NoiseSearch(r) => assert!((r.sigma - 1.878).abs() < 0.03, "{}", r.sigma),
        other => panic!("{other:?}"),
    }
}

#[test]
fn thread_count_does_not_change_records() {
    let base = ["estimate-delta", "--t", "20", "--k", "3", "--sigma", "0.6", "--epsilon", "2", "--samples", "50000", "--seed", "5"];
    let one = run(&[&["--reproducible", "--threads", "1"], &base[..]].concat());
    let four = bin().env("BIS_ACCOUNTANT_THREADS", "4").args(["--reproducible"]).args(base).output().unwrap();
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn batch_preserves_input_order() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(
        file,
        r#"[
            {{"t": 1, "k": 1, "sigma": 1.0, "epsilon": 1.0, "samples": 20000, "seed": 1}},
            {{"t": 8, "k": 2, "sigma": 0.8, "epsilon": 0.5, "samples": 20000}},
            {{"t": 3, "k": 3, "sigma": 2.0, "epsilon": 0.25, "samples": 20000, "delta": 0.01}}
        ]"#
    )
    .unwrap();
    let out = run(&["--reproducible", "estimate-delta", "--batch", file.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&out);
    let shapes: Vec<(usize, usize)> = recs.iter().map(|r| (r.config.t, r.config.k)).collect();
    assert_eq!(shapes, vec![(1, 1), (8, 2), (3, 3)]);
    assert_eq!(recs[2].config.delta_target, 0.01);
}

#[test]
fn batch_with_invalid_entry_emits_nothing() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(
        file,
        r#"[{{"t": 1, "k": 1, "sigma": 1.0, "epsilon": 1.0, "samples": 20000}}, {{"t": 1, "k": 2, "sigma": 1.0, "epsilon": 1.0}}]"#
    )
    .unwrap();
    let out = run(&["estimate-delta", "--batch", file.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn output_file_and_table_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    let out = run(&[
        "--output", path.to_str().unwrap(), "estimate-delta", "--t", "2", "--k", "1", "--sigma", "1", "--epsilon", "1", "--samples",
        "5000",
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    RunRecord::parse_line(text.lines().next().unwrap()).unwrap();

    let table = run(&["--format", "table", "estimate-delta", "--t", "2", "--k", "1", "--sigma", "1", "--epsilon", "1", "--samples", "5000"]);
    let text = String::from_utf8(table.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("sigma") && lines[0].contains("upper_bound"));
}

#[test]
fn validate_passes_and_catches_injected_fault() {
    let ok = run(&["validate", "--max-t", "10", "--vectors", "20", "--instances", "5000"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 6);

    let bad = run(&["validate", "--max-t", "10", "--vectors", "20", "--instances", "5000", "--inject-fault", "invert-screening"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("[FAIL] screening-dominance"));
}

#[test]
fn validate_default_run() {
    let out = run(&["validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn record_lines_round_trip() {
    let out = run(&["--reproducible", "estimate-delta", "--t", "5", "--k", "2", "--sigma", "1", "--epsilon", "1", "--samples", "3000"]);
    let line = String::from_utf8(out.stdout).unwrap();
    let rec = RunRecord::parse_line(&line).unwrap();
    assert_eq!(rec.to_line(), line.trim_end());
    assert!(RunRecord::parse_line(&line.replace("\"command\"", "\"extra\":1,\"command\"")).is_err());
}
