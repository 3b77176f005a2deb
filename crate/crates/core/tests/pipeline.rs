use std::collections::BTreeSet;

use rankiq::data::{build_synthetic_dataset, load_dataset, save_dataset, Dataset, FeatureScaling};
use rankiq::evalsuite::{evaluate, SessionConfig};
use rankiq::experiment::{run_demo, write_demo, DemoConfig};
use rankiq::froracles::{calibrate, level_anchors, score_images, Oracle};
use rankiq::pairgen::{chain_dils, generate_dips, load_dils, load_dips, save_dils, save_dips, DilConfig, DipConfig};
use rankiq::pairrank::{train_pairs, TrainConfig};
use rankiq::qnet::predict;
use rankiq::{Linear, QNet};

fn small_dataset() -> Dataset {
    let set = build_synthetic_dataset(12, 32, 5).unwrap();
    let raw = score_images(&set.images, set.records, &[Oracle::Psnr, Oracle::Ssim]).unwrap();
    let mut ds = raw.clone();
    for o in [Oracle::Psnr, Oracle::Ssim] {
        ds = calibrate(&ds, o.name(), &level_anchors(&raw, o.name()).unwrap()).unwrap();
    }
    ds
}

#[test]
fn calibrated_scores_follow_levels() {
    let ds = small_dataset();
    assert_eq!((ds.len(), ds.sources(), ds.distortion_count(), ds.level_count()), (132, 12, 2, 5));
    let psnr = ds.oracle_column("psnr").unwrap();
    for r in ds.records().iter().filter(|r| r.level > 1) {
        assert!(psnr[r.id] < psnr[r.id - 1], "record {}", r.id);
    }
}

#[test]
fn artifacts_round_trip() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let (f, s) = (dir.path().join("f.csv"), dir.path().join("s.csv"));
    save_dataset(&ds, &f, &s, None).unwrap();
    assert_eq!(load_dataset(&f, &s, None).unwrap(), ds);

    let dips = generate_dips(&ds, &DipConfig { budget: 3000, seed: 2, ..DipConfig::default() }).unwrap();
    let dils = chain_dils(&dips, &DilConfig { budget: 500, seed: 2, ..DilConfig::default() }).unwrap();
    save_dips(&dir.path().join("d.csv"), &dips).unwrap();
    save_dils(&dir.path().join("l.csv"), &dils).unwrap();
    assert_eq!(load_dips(&dir.path().join("d.csv")).unwrap(), dips);
    assert_eq!(load_dils(&dir.path().join("l.csv")).unwrap(), dils);
}

#[test]
fn subset_and_scaling() {
    let ds = small_dataset();
    let keep: BTreeSet<usize> = [11, 33].into_iter().collect();
    let (sub, original) = ds.subset(&keep).unwrap();
    assert_eq!(sub.len(), 22);
    assert_eq!(sub.sources(), 2);
    assert_eq!(original[11], 33);
    assert_eq!(sub.records()[11].features, ds.records()[33].features);

    let ids: Vec<usize> = (0..ds.len()).collect();
    let scaled = FeatureScaling::fit(&ds, &ids).unwrap().apply(&ds).unwrap();
    for k in 0..scaled.feature_dim() {
        let col: Vec<f64> = scaled.records().iter().map(|r| r.features[k]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-9, "dimension {k}");
    }
}

#[test]
fn linear_training_orders_held_out_images() {
    let ds = small_dataset();
    let ids: Vec<usize> = (0..ds.len()).collect();
    let ds = FeatureScaling::fit(&ds, &ids).unwrap().apply(&ds).unwrap();
    let dips = generate_dips(&ds, &DipConfig { seed: 3, ..DipConfig::default() }).unwrap();
    let cfg = TrainConfig { batch_size: 64, epochs: 3, seed: 3, validation_fraction: 0.25, ..TrainConfig::default() };
    let (model, log) = train_pairs(&ds, &dips, Linear::zeros(ds.feature_dim()), &cfg).unwrap();
    assert!(log.best_val_loss < log.initial_val_loss);
    let model = QNet::from(model);
    let scores = predict(&model, &ds.feature_matrix()).unwrap();
    let session = SessionConfig { sessions: 5, split: 0.5, seed: 1, remap: false };
    let report = evaluate(&ds, &scores, None, Some(&dips), &session).unwrap();
    assert!(report.p_test.unwrap().p > 0.8);
    assert!(report.l_test.unwrap() > 0.8);
    assert!(report.correlations.is_none());
}

#[test]
fn small_demo_is_deterministic() {
    let cfg = DemoConfig { sources: 20, side: 32, pair_budget: 8000, list_budget: 2000, sessions: 5, ..DemoConfig::default() };
    let a = run_demo(&cfg).unwrap();
    let b = run_demo(&cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.models.len(), 3);
    assert_eq!(a.report.images, 220);

    let dir = tempfile::tempdir().unwrap();
    write_demo(&a, dir.path()).unwrap();
    for name in ["features.csv", "scores.csv", "dips.csv", "dils.csv", "predictions.csv", "model_deep.json", "report.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let model: QNet = rankiq::qnet::load_model(&dir.path().join("model_deep.json")).unwrap();
    assert_eq!(predict(&model, &a.dataset.feature_matrix()).unwrap(), a.models[1].scores);
}
