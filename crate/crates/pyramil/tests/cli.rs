//! End-to-end tests of the `pyramil` binary: every subcommand runs against a
//! real (tiny) dataset directory, outputs land where documented, reruns are
//! byte-identical, and failures exit nonzero with a single stderr line.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pyramil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pyramil"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn run_ok(args: &[&str]) -> String {
    let out = pyramil(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn generate_tiny(dir: &Path) {
    run_ok(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "generate",
        "--train-samples",
        "12",
        "--val-samples",
        "6",
        "--test-samples",
        "6",
    ]);
}

/// Byte-compares two directory trees, ignoring the `config.json` invocation
/// echo (it records `--out-dir`, which necessarily differs).
fn assert_trees_identical(a: &Path, b: &Path) {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut other: Vec<String> = fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    other.sort();
    assert_eq!(names, other, "{} and {} list different entries", a.display(), b.display());
    for name in names {
        if name == "config.json" {
            continue;
        }
        let (pa, pb) = (a.join(&name), b.join(&name));
        if pa.is_dir() {
            assert_trees_identical(&pa, &pb);
        } else {
            assert_eq!(
                fs::read(&pa).unwrap(),
                fs::read(&pb).unwrap(),
                "{} differs between runs",
                pa.display()
            );
        }
    }
}

#[test]
fn help_lists_every_subcommand() {
    let text = run_ok(&["--help"]);
    for name in [
        "generate", "train", "infer", "bench", "ablate", "attnmap", "sweep-k",
    ] {
        assert!(text.contains(name), "--help does not mention {name}");
    }
}

#[test]
fn generate_is_byte_identical_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate_tiny(&a);
    generate_tiny(&b);
    assert_trees_identical(&a, &b);

    // A different seed must actually change the data.
    let c = tmp.path().join("c");
    run_ok(&[
        "--seed",
        "1",
        "--out-dir",
        c.to_str().unwrap(),
        "generate",
        "--train-samples",
        "12",
        "--val-samples",
        "6",
        "--test-samples",
        "6",
    ]);
    let sample = "train_0000";
    assert_ne!(
        fs::read(a.join(sample).join("level_1.bin")).unwrap(),
        fs::read(c.join(sample).join("level_1.bin")).unwrap(),
        "seed 1 produced the same patches as seed 0"
    );
}

#[test]
fn train_infer_pipeline_produces_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate_tiny(&data);

    let run = tmp.path().join("run");
    run_ok(&[
        "--out-dir",
        run.to_str().unwrap(),
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--epochs",
        "3",
        "--lr",
        "1e-3",
    ]);
    for name in ["checkpoint", "train_log.jsonl", "train_summary.json", "config.json"] {
        assert!(run.join(name).exists(), "train did not write {name}");
    }
    let log = fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3, "expected one log line per epoch");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("train_summary.json")).unwrap())
            .unwrap();
    let best = summary["best_epoch"].as_u64().unwrap();
    assert!((1..=3).contains(&best));

    // Training again with the same flags must reproduce the run bit for bit.
    let rerun = tmp.path().join("rerun");
    run_ok(&[
        "--out-dir",
        rerun.to_str().unwrap(),
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--epochs",
        "3",
        "--lr",
        "1e-3",
    ]);
    assert_trees_identical(&run, &rerun);

    let inf = tmp.path().join("inf");
    let checkpoint = run.join("checkpoint");
    run_ok(&[
        "--out-dir",
        inf.to_str().unwrap(),
        "infer",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
    ]);
    let preds = fs::read_to_string(inf.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 6, "one prediction per test sample");
    let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    // Default schedule [3, 12] on a 16-parent pyramid: 16 + 4*3 + 4*12.
    assert_eq!(first["encoder_calls"].as_u64().unwrap(), 76);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(inf.join("infer_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["samples"].as_u64().unwrap(), 6);
    assert_eq!(summary["encoder_calls_per_sample"].as_u64().unwrap(), 76);
}

#[test]
fn bench_reports_both_modes_and_the_flop_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate_tiny(&data);
    let out = tmp.path().join("bench");
    let stdout = run_ok(&[
        "--out-dir",
        out.to_str().unwrap(),
        "bench",
        "--dataset",
        data.to_str().unwrap(),
        "--schedule",
        "12,12",
        "--runs",
        "3",
    ]);
    assert!(stdout.contains("zoom"));
    assert!(stdout.contains("full_grid"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    let entries = report["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    // Schedule (12, 12): 16 + 4*12 + 4*12 = 112 calls versus 256 full-grid.
    assert_eq!(entries[0]["analytic_encoder_calls"].as_u64().unwrap(), 112);
    assert_eq!(entries[1]["analytic_encoder_calls"].as_u64().unwrap(), 256);
    assert_eq!(
        entries[0]["measured_encoder_calls"].as_u64().unwrap(),
        112,
        "measured calls disagree with the analytic count"
    );
    let ratio = report["flop_ratio_zoom_over_full"].as_f64().unwrap();
    assert!(ratio < 1.0, "zoomed inference should cost fewer FLOPs, got {ratio}");
}

#[test]
fn attnmap_writes_csv_and_graymap_per_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate_tiny(&data);
    let run = tmp.path().join("run");
    run_ok(&[
        "--out-dir",
        run.to_str().unwrap(),
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--epochs",
        "2",
    ]);
    let out = tmp.path().join("maps");
    run_ok(&[
        "--out-dir",
        out.to_str().unwrap(),
        "attnmap",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        run.join("checkpoint").to_str().unwrap(),
        "--level",
        "1",
        "--sample",
        "test_0002",
    ]);
    let csv = fs::read_to_string(out.join("attnmap/test_0002_level_1.csv")).unwrap();
    assert!(csv.starts_with("patch_index,row,col,weight"));
    assert_eq!(csv.lines().count(), 17, "header plus all 16 coarse patches");
    let pgm = fs::read(out.join("attnmap/test_0002_level_1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"), "4x4 grid at scale 16");

    // Levels are 1-based; 0 and 4 are out of range for a 3-level model.
    let bad = pyramil(&[
        "--out-dir",
        out.to_str().unwrap(),
        "attnmap",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        run.join("checkpoint").to_str().unwrap(),
        "--level",
        "4",
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("1..=3"));
}

#[test]
fn failures_exit_nonzero_with_one_stderr_line_and_no_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let result = pyramil(&[
        "--out-dir",
        out.to_str().unwrap(),
        "train",
        "--dataset",
        tmp.path().join("missing").to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "stderr was: {stderr}");
    assert!(stderr.starts_with("error: "));
    assert!(!out.exists(), "failed run must not leave an output directory");

    // Unknown arm name: validated before any training happens.
    let data = tmp.path().join("data");
    generate_tiny(&data);
    let bad = pyramil(&[
        "--out-dir",
        out.to_str().unwrap(),
        "ablate",
        "--dataset",
        data.to_str().unwrap(),
        "--arms",
        "diff_topk,warp_drive",
        "--epochs",
        "1",
    ]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("warp_drive"));
    assert!(!out.exists());
}
