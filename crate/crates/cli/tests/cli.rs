use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use skim_core::io::save_raster_set;
use skim_core::patterns::{gen_synthetic_digits, SyntheticDigitParams};

const SMALL: &str = r#"{
  "task": {"stream_len": 10000, "num_embeddings": 25, "test_stream_len": 6000, "test_embeddings": 12},
  "network": {"num_dendrites": 30}
}"#;

fn skim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skim"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(all_files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn demo_writes_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "cfg.json", SMALL);
    let o = skim(
        tmp.path(),
        &["demo", "--config", "cfg.json", "--out", "run"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&tmp.path().join("run/metrics.json"));
    assert!(m["wills_error"]["value"].is_number());
    assert_eq!(
        m["counts"]["true_positives"].as_u64().unwrap()
            + m["counts"]["false_negatives"].as_u64().unwrap(),
        12
    );
    for f in [
        "network.json",
        "weights.csv",
        "train_raster.txt",
        "traces/soma.csv",
        "config.json",
    ] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn seeds_change_input_weights() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "cfg.json", SMALL);
    for seed in ["1", "2"] {
        let o = skim(
            tmp.path(),
            &[
                "demo", "--config", "cfg.json", "--seed", seed, "--out", seed,
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = json(&tmp.path().join("1/network.json"));
    let b = json(&tmp.path().join("2/network.json"));
    assert_ne!(a["input_weights"], b["input_weights"]);
}

#[test]
fn online_solver_matches_batch() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "cfg.json", SMALL);
    for solver in ["batch", "online"] {
        let o = skim(
            tmp.path(),
            &[
                "demo", "--config", "cfg.json", "--solver", solver, "--out", solver,
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let b = json(&tmp.path().join("batch/metrics.json"));
    let o = json(&tmp.path().join("online/metrics.json"));
    let (wb, wo) = (
        b["wills_error"]["value"].as_f64().unwrap(),
        o["wills_error"]["value"].as_f64().unwrap(),
    );
    assert!((wb - wo).abs() <= 0.05, "batch {wb} online {wo}");
    let (db, dz) = (
        b["detection_rate"].as_f64().unwrap(),
        o["detection_rate"].as_f64().unwrap(),
    );
    assert!((db - dz).abs() <= 0.1, "batch {db} online {dz}");
}

#[test]
fn train_then_test() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "cfg.json", SMALL);
    let o = skim(tmp.path(), &["train", "--config", "cfg.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!tmp.path().join("o/metrics.json").exists());
    let o = skim(tmp.path(), &["test", "--config", "cfg.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&tmp.path().join("o/metrics.json"));
    assert!(m["wills_error"].is_object());
    assert!(tmp.path().join("o/traces/output_spikes.csv").exists());
}

#[test]
fn two_pass_prune_reports_kept_dendrites() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "cfg.json",
        r#"{"task": {"stream_len": 10000, "num_embeddings": 25},
            "network": {"num_dendrites": 80}, "prune": {"strategy": "two_pass", "keep": 40}}"#,
    );
    assert_eq!(
        skim(tmp.path(), &["train", "--config", "cfg.json"])
            .status
            .code(),
        Some(0)
    );
    let o = skim(tmp.path(), &["prune", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let net = json(&tmp.path().join("skim_out/pruned_network.json"));
    assert_eq!(net["num_dendrites"], 40);
    assert_eq!(net["kernels"].as_array().unwrap().len(), 40);
    let report = json(&tmp.path().join("skim_out/prune_report.json"));
    assert_eq!(report["kept_indices"].as_array().unwrap().len(), 40);
    assert_eq!(report["discarded_indices"].as_array().unwrap().len(), 40);
}

#[test]
fn iterative_prune_from_a_fresh_pool() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "cfg.json",
        r#"{"task": {"stream_len": 8000, "num_embeddings": 20},
            "prune": {"strategy": "iterative", "pool": 20, "fraction": 0.25, "rounds": 3}}"#,
    );
    let o = skim(tmp.path(), &["prune", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&tmp.path().join("skim_out/prune_report.json"));
    assert_eq!(report["rounds"].as_array().unwrap().len(), 3);
    assert!(
        report["residual_after"].as_f64().unwrap() <= report["residual_before"].as_f64().unwrap()
    );
}

#[test]
fn wrong_channel_count_is_a_dimension_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "cfg.json", SMALL);
    assert_eq!(
        skim(tmp.path(), &["train", "--config", "cfg.json"])
            .status
            .code(),
        Some(0)
    );
    let set = gen_synthetic_digits(&SyntheticDigitParams {
        num_channels: 3,
        num_classes: 1,
        per_class: 2,
        ..Default::default()
    })
    .unwrap();
    save_raster_set(&set, &tmp.path().join("three.txt")).unwrap();
    write(
        tmp.path(),
        "ds.json",
        r#"{"task": {"kind": "dataset", "test_set": "three.txt"}, "output": {"dir": "ds"}, "network": {"file": "skim_out/network.json"}}"#,
    );
    let o = skim(tmp.path(), &["test", "--config", "ds.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension mismatch"), "{}", stderr(&o));
    assert!(!tmp.path().join("ds").exists());
}

#[test]
fn invalid_config_lists_every_problem_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "bad.json",
        r#"{"task": {"num_channels": 0}, "network": {"num_dendrites": 0, "threshold": 2.0},
            "training": {"warp_steps": 0}, "prune": {"keep": 0}, "output": {"dir": "never"}}"#,
    );
    let o = skim(tmp.path(), &["prune", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for needle in [
        "num_channels",
        "num_dendrites",
        "threshold",
        "warp",
        "prune.keep",
        "network.file",
    ] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
    assert!(!tmp.path().join("never").exists());

    write(tmp.path(), "typo.json", r#"{"network": {"dendrites": 3}}"#);
    let o = skim(tmp.path(), &["demo", "--config", "typo.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dendrites"));
    assert_eq!(
        skim(tmp.path(), &["demo", "--config", "missing.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        skim(tmp.path(), &["demo", "--solver", "qr"]).status.code(),
        Some(1)
    );
    assert!(!tmp.path().join("skim_out").exists());
}

#[test]
fn runtime_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "cfg.json", SMALL);
    assert_eq!(
        skim(tmp.path(), &["train", "--config", "cfg.json"])
            .status
            .code(),
        Some(0)
    );
    // All-zero output weights pass validation but cannot be ranked.
    let path = tmp.path().join("skim_out/network.json");
    let mut net = json(&path);
    for row in net["output_weights"].as_array_mut().unwrap() {
        for w in row.as_array_mut().unwrap() {
            *w = Value::from(0.0);
        }
    }
    fs::write(&path, serde_json::to_string(&net).unwrap()).unwrap();
    let o = skim(tmp.path(), &["test", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn dataset_train_and_test() {
    let tmp = tempfile::tempdir().unwrap();
    let set = gen_synthetic_digits(&SyntheticDigitParams {
        num_classes: 3,
        per_class: 4,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    save_raster_set(&set, &tmp.path().join("digits.txt")).unwrap();
    write(
        tmp.path(),
        "cfg.json",
        r#"{"task": {"kind": "dataset", "train_set": "digits.txt"},
            "network": {"num_dendrites": 30},
            "training": {"target_width": 200, "warp_min": 0.9, "warp_max": 1.1, "warp_steps": 3}}"#,
    );
    let o = skim(tmp.path(), &["train", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = skim(tmp.path(), &["test", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&tmp.path().join("skim_out/metrics.json"));
    assert_eq!(m["per_class"].as_array().unwrap().len(), 3);
    assert_eq!(
        m["pooled"]["true_positives"].as_u64().unwrap()
            + m["pooled"]["false_negatives"].as_u64().unwrap(),
        12
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "cfg.json", SMALL);
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for cmd in ["demo", "train", "test"] {
            let o = skim(tmp.path(), &[cmd, "--config", "cfg.json"]);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        }
        let files = all_files(&tmp.path().join("skim_out"));
        snapshots.push(
            files
                .iter()
                .map(|p| (p.clone(), fs::read(p).unwrap()))
                .collect::<Vec<_>>(),
        );
        fs::remove_dir_all(tmp.path().join("skim_out")).unwrap();
    }
    assert!(snapshots[0].len() >= 12);
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn kernels_lists_the_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let o = skim(tmp.path(), &["kernels"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    for kind in [
        "alpha",
        "damped_resonance",
        "delayed_alpha",
        "delayed_gaussian",
        "leaky_integrator_nl",
        "custom",
    ] {
        assert!(out.contains(kind), "{kind}");
    }
    assert!(out.contains("tau ~ U(0, 100)"));
}
