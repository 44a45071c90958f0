use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flowseg_core::evaluation::score_image;
use flowseg_core::io;
use flowseg_core::LabelMap;

fn flowseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, fixture: &str, count: usize) {
    let o = flowseg(&[
        "synth",
        "--fixture",
        fixture,
        "--count",
        &count.to_string(),
        "--out",
        s(dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn segment_two_blob_recovers_truth_after_matching() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "two-blob", 1);
    let out = dir.path().join("out");
    let o = flowseg(&[
        "segment",
        s(&dir.path().join("features/two-blob.npy")),
        "--out",
        s(&out),
        "--png",
    ]);
    assert!(o.status.success());
    let pred = io::read_labels(out.join("two-blob.pgm")).unwrap();
    let gt = io::read_labels(dir.path().join("gt/two-blob.pgm")).unwrap();
    let score = score_image(&pred, &gt, 255).unwrap();
    let mapped: Vec<u32> = pred
        .labels()
        .iter()
        .map(|&l| score.mapping[l as usize] as u32)
        .collect();
    assert_eq!(mapped, gt.labels());
    assert!(out.join("two-blob.png").is_file());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("two-blob.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["flow"]["converged"], true);
    assert_eq!(manifest["config"]["beta"], 0.6);
}

#[test]
fn high_beta_gives_two_regions_on_two_blob() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "two-blob", 1);
    let out = dir.path().join("out");
    let o = flowseg(&[
        "segment",
        s(&dir.path().join("features/two-blob.npy")),
        "--out",
        s(&out),
        "--beta",
        "0.9",
    ]);
    assert!(o.status.success());
    let line: serde_json::Value = serde_json::from_str(stdout(&o).lines().last().unwrap()).unwrap();
    assert_eq!(line["clusters"], 2);
}

#[test]
fn local_only_affinity_still_segments() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "two-blob", 1);
    let out = dir.path().join("out");
    let o = flowseg(&[
        "segment",
        s(&dir.path().join("features/two-blob.npy")),
        "--out",
        s(&out),
        "--beta",
        "0",
    ]);
    assert!(o.status.success());
    let pred = io::read_labels(out.join("two-blob.pgm")).unwrap();
    assert_eq!(pred.height(), 8);
}

#[test]
fn missing_input_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = flowseg(&[
        "segment",
        s(&dir.path().join("absent.npy")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_features_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.npy");
    fs::write(&bad, b"not an array").unwrap();
    let o = flowseg(&["segment", s(&bad), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_parameter_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "two-blob", 1);
    let f = dir.path().join("features/two-blob.npy");
    let out = dir.path().join("out");
    assert_eq!(
        flowseg(&["segment", s(&f), "--out", s(&out), "--gamma", "2"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(flowseg(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "two-blob", 1);
    let f = dir.path().join("features/two-blob.npy");
    let o = flowseg(&[
        "segment",
        s(&f),
        "--out",
        s(&dir.path().join("out")),
        "--max-flow-iters",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "two-blob", 1);
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "beta = 0.2\ngamma = 0.5\n").unwrap();
    let o = flowseg(&[
        "-v",
        "segment",
        s(&dir.path().join("features/two-blob.npy")),
        "--out",
        s(&dir.path().join("out")),
        "--config",
        s(&cfg),
        "--gamma",
        "0.7",
    ]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr).into_owned() + &stdout(&o);
    assert!(err.contains("beta = 0.2 (config file)"), "{err}");
    assert!(err.contains("gamma = 0.7 (flag)"), "{err}");
    assert!(err.contains("inflation_r = 2.6 (default)"), "{err}");
}

#[test]
fn directory_batch_then_eval_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "four-blob", 3);
    let pred = dir.path().join("pred");
    assert!(flowseg(&[
        "segment",
        s(&dir.path().join("features")),
        "--out",
        s(&pred)
    ])
    .status
    .success());
    let o = flowseg(&["eval", s(&pred), s(&dir.path().join("gt"))]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["summary"]["images"], 3);
    assert_eq!(lines[3]["summary"]["miou"], 1.0);
    assert!(pred.join("eval.jsonl").is_file());
}

#[test]
fn eval_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let p = LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
    let g = LabelMap::new(2, 2, vec![0, 1, 1, 1]).unwrap();
    io::write_labels(&p, pred.join("x.pgm"), io::LabelFormat::Pgm).unwrap();
    io::write_labels(&g, gt.join("x.npy"), io::LabelFormat::Npy).unwrap();
    let o = flowseg(&[
        "eval",
        s(&pred),
        s(&gt),
        "--results",
        s(&dir.path().join("r.jsonl")),
    ]);
    assert!(o.status.success());
    let first: serde_json::Value =
        serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    let m = first["miou"].as_f64().unwrap();
    assert!((m - 7.0 / 12.0).abs() < 1e-12, "{m}");
}

#[test]
fn eval_without_common_stems_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let m = LabelMap::new(1, 2, vec![0, 1]).unwrap();
    io::write_labels(&m, pred.join("a.pgm"), io::LabelFormat::Pgm).unwrap();
    io::write_labels(&m, gt.join("b.pgm"), io::LabelFormat::Pgm).unwrap();
    assert!(!flowseg(&["eval", s(&pred), s(&gt)]).status.success());
}

#[test]
fn diagnose_reports_bound_and_exact_inflation_scaling() {
    let o = flowseg(&["diagnose", "--inflation-r", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("0.171573"), "{text}");
    assert!(text.contains("mean 2.000000"), "{text}");
    assert!(text.contains("first iterate with infinite d_H"), "{text}");
}

#[test]
fn diagnose_without_pruning_stays_finite() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("d.json");
    let o = flowseg(&["diagnose", "--no-prune", "--json", s(&json)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("d_H finite at every iterate"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert!(report["first_infinite_iteration"].is_null());
    assert_eq!(report["clusters"], 3);
}

#[test]
fn sweep_prints_one_row_per_grid_value() {
    let o = flowseg(&["sweep", "--param", "inflation_r", "--grid", "1.5,2,2.6,3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 5);
    let o = flowseg(&["sweep", "--param", "beta", "--grid", "0,0.6,1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn sweep_with_empty_grid_exits_1() {
    assert_eq!(
        flowseg(&["sweep", "--param", "beta", "--grid", ""])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn propagation_non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "two-blob", 1);
    let f = dir.path().join("features/two-blob.npy");
    let o = flowseg(&[
        "segment",
        s(&f),
        "--out",
        s(&dir.path().join("out")),
        "--max-prop-iters",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}
