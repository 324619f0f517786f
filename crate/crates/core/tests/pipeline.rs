use std::path::Path;

use deepstat::pipeline::{self, Detector, Layout, PipelineConfig, Stage, VerdictKind};
use deepstat::synthetic::{write_demo, SyntheticSpec};
use deepstat::Error;

fn tiny(dir: &Path, seed: u64) -> PipelineConfig {
    let spec = SyntheticSpec { baseline_docs: 300, novel_docs: 100, ..SyntheticSpec::default() };
    write_demo(dir, &spec).unwrap();
    let text = format!(
        "seed = {seed}\n[corpus]\npath = \"baseline.tsv\"\nnovel_path = \"novel.txt\"\nmax_len = 20\n\
         [gan]\nd_z = 4\nd_e = 8\nd_h = 8\nn_filters = 4\nd_recon_hidden = 4\nepochs = 1\n[ae]\nd_ae = 4\nepochs = 2\n"
    );
    PipelineConfig::from_toml(&text, dir).unwrap()
}

#[test]
fn stages_require_upstream_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path(), 1);
    for stage in [Stage::ExtractStats, Stage::TrainAe, Stage::Calibrate, Stage::Evaluate] {
        let err = pipeline::run_stage(stage, &config).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }), "{}: {err}", stage.name());
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn calibration_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path(), 2);
    pipeline::run_all(&config).unwrap();
    let layout = Layout::new(&config.out_dir);
    let before = std::fs::read(layout.threshold()).unwrap();
    pipeline::run_stage(Stage::Calibrate, &config).unwrap();
    assert_eq!(before, std::fs::read(layout.threshold()).unwrap());
}

#[test]
fn retrained_gan_breaks_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path(), 3);
    pipeline::run_all(&config).unwrap();
    let layout = Layout::new(&config.out_dir);
    assert!(Detector::load(&layout).is_ok());

    let mut other = config.clone();
    other.seed = 4;
    pipeline::run_stage(Stage::TrainGan, &other).unwrap();
    for stage in [Stage::TrainAe, Stage::Calibrate, Stage::Evaluate] {
        let err = pipeline::run_stage(stage, &config).unwrap_err();
        assert!(matches!(err, Error::ArtifactMismatch(_)), "{}: {err}", stage.name());
    }
    assert!(matches!(Detector::load(&layout), Err(Error::ArtifactMismatch(_))));
}

#[test]
fn verdicts_are_consistent_with_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(dir.path(), 5);
    pipeline::run_all(&config).unwrap();
    let detector = Detector::load(&Layout::new(&config.out_dir)).unwrap();
    for text in ["a1 a2 a3 a4 a5", "b1 b2 b3", "zzz"] {
        let v = detector.detect(text).unwrap();
        assert_eq!(v.kind == VerdictKind::Anomalous, v.score > detector.threshold.tau);
        if let Some(probs) = &v.class_probs {
            assert_eq!(probs.len(), 2);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|p| *p >= 0.0));
        }
    }
    assert!(matches!(detector.detect("  \t "), Err(Error::InvalidInput(_))));
}
