use std::path::Path;

use reidgen::harness::{emit_plots, preset_names, run_experiment, ExperimentConfig, RunManifest, RunOptions};
use reidgen::Error;

fn smoke(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset("smoke").unwrap();
    cfg.output_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn every_preset_resolves_and_validates() {
    for name in preset_names() {
        let cfg = ExperimentConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn smoke_run_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke(tmp.path());
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert_eq!(summary.folds.len(), 3);
    for f in &summary.folds {
        assert!(f.fold.synthetic > 0);
        assert_eq!(f.fold.test_sessions.len(), 1);
    }
    for name in ["config.toml", "aggregate.json", "manifest.json", "comparison.txt", "comparison.json"] {
        assert!(tmp.path().join(name).is_file(), "{name}");
    }
    for name in ["gan_G.json", "gan_G_loss.csv", "reid.json", "reid_log.csv", "eval_report.json", "cmc.csv", "confusion.csv"] {
        assert!(tmp.path().join("fold_0").join(name).is_file(), "{name}");
    }
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.stages.iter().all(|s| s.status == "done"));
    assert!(manifest.artifacts.iter().any(|a| a.path == "fold_2/eval_report.json"));

    let plots = emit_plots(tmp.path()).unwrap();
    assert!(plots.iter().any(|p| p.to_string_lossy().ends_with("fold_0_gan_G_loss.svg")));

    // resuming reuses every checkpoint and reproduces the reports
    let before = std::fs::read(tmp.path().join("fold_1/eval_report.json")).unwrap();
    run_experiment(&cfg, RunOptions { resume: true }).unwrap();
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.stages.iter().filter(|s| s.stage.starts_with("gan") || s.stage == "reid").all(|s| s.status == "resumed"));
    assert_eq!(std::fs::read(tmp.path().join("fold_1/eval_report.json")).unwrap(), before);
}

#[test]
fn per_class_run_trains_one_generator_per_class() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke(tmp.path());
    cfg.augment.mode = reidgen::harness::AugmentMode::PerClass;
    cfg.split.folds = Some(vec![0]);
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    let fold = tmp.path().join("fold_0");
    for g in ["G", "G0", "G1", "G2", "G3"] {
        assert!(fold.join(format!("gan_{g}.json")).is_file(), "{g}");
    }
    assert_eq!(summary.folds.len(), 1);
}

#[test]
fn stage_failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke(tmp.path());
    cfg.dataset.toy.p_face = 0.0; // nothing can pass
    cfg.filter.reid_input = true;
    cfg.augment.mode = reidgen::harness::AugmentMode::None;
    let err = run_experiment(&cfg, RunOptions::default()).unwrap_err();
    match err {
        Error::Stage { stage, source, .. } => {
            assert!(stage.contains("reid filter"), "{stage}");
            assert!(matches!(*source, Error::EmptyFilteredSet));
        }
        other => panic!("unexpected {other}"),
    }
}
