// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;

use expertlens::pipeline::{preset::write_preset, run_pipeline, Analysis, RunConfig};
use expertlens::Error;
use serde_json::Value;

fn read(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn preset_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_preset("paper-desk", dir.path(), 11).unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let manifest = run_pipeline(&cfg).unwrap();
    let out = dir.path().join("report");

    let files: Vec<&str> = manifest.outputs.iter().map(|f| f.path.as_str()).collect();
    for want in [
        "ap/index.json",
        "experts/set_sizes.csv",
        "similarity/records.csv",
        "align/alignment.json",
        "domains/graph.dot",
        "layers/layers.csv",
        "folds/stability.json",
        "checkpoints/overlap.json",
        "plans/d00s0.json",
        "genstats/prevalence.json",
    ] {
        assert!(files.contains(&want), "missing {want}");
        assert!(out.join(want).is_file());
    }
    assert!(out.join("run_manifest.json").is_file());

    let align = read(&out.join("align/alignment.json"));
    assert_eq!(align["config_hash"], Value::String(cfg.config_hash()));
    assert_eq!(align["seed"], 11);
    let jaccard = align["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["human_table"] == "graded" && r["method"]["kind"] == "JACCARD" && r["method"]["tau"] == 0.5)
        .expect("jaccard report");
    assert!(jaccard["rho"].as_f64().unwrap() > 0.5, "{jaccard}");
    assert!(!align["levels"].as_array().unwrap().is_empty());

    let domains = read(&out.join("domains/report.json"));
    let first = &domains["reports"][0];
    assert!(first["mean_pct_shared"].as_f64().unwrap() > first["baseline_mean_pct_shared"].as_f64().unwrap());

    let plan = read(&out.join("plans/d00s0.json"));
    assert_eq!(plan["entries"].as_array().unwrap().len(), 50);
    assert_eq!(plan["concept"], "d00s0");

    let gen = read(&out.join("genstats/prevalence.json"));
    assert_eq!(gen["concepts"][0]["unseen_words"].as_array().unwrap().len(), 7);
}

#[test]
fn missing_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_preset("paper-desk", dir.path(), 1).unwrap();
    fs::remove_file(dir.path().join("dumps/final.actd")).unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    match run_pipeline(&cfg) {
        Err(Error::Validation(problems)) => {
            assert!(problems.iter().any(|p| p.contains("final.actd")), "{problems:?}");
        }
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn subset_run_writes_only_requested_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_preset("paper-desk", dir.path(), 2).unwrap();
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    cfg.analyses = vec![Analysis::Experts];
    let manifest = run_pipeline(&cfg).unwrap();
    assert!(manifest.outputs.iter().all(|f| f.path.starts_with("ap/") || f.path.starts_with("experts/")));
    assert_eq!(manifest.analyses, vec![Analysis::Score, Analysis::Experts]);
}

#[test]
fn unknown_preset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(write_preset("nope", dir.path(), 0).is_err());
}
