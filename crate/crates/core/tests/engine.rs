//! End-to-end training runs on small synthetic data.

use std::path::Path;

use serde_json::json;
use trd_core::data::resize::ResizeMode;
use trd_core::data::LabeledImageSet;
use trd_core::model::Model;
use trd_core::rng::SplitMix64;
use trd_core::train::{
    evaluate, export_cam_gallery, load_run_model, read_metrics, stress_test, train_on, EpochRecord,
    ExperimentConfig, Normalization, TrainOptions,
};
use trd_core::{Error, Resolution, Tensor};

const SIDE: usize = 8;
const CLASSES: usize = 3;

/// Class k lights up a different 4-pixel-wide band; noise on top.
fn synthetic(n: usize, seed: u64) -> LabeledImageSet {
    let mut rng = SplitMix64::new(seed);
    let mut px = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % CLASSES;
        labels.push(k);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let on = match k {
                    0 => y < SIDE / 2,
                    1 => x < SIDE / 2,
                    _ => (x + y) % 2 == 0,
                };
                px.push(if on { 0.8 } else { 0.2 } + 0.2 * (rng.next_f64() as f32 - 0.5));
            }
        }
    }
    LabeledImageSet::new(Tensor::from_vec(vec![n, 1, SIDE, SIDE], px).unwrap(), labels, CLASSES, "synthetic").unwrap()
}

fn config(dir: &Path, epochs: usize, p: f64, milestones: &[usize]) -> ExperimentConfig {
    ExperimentConfig::from_value(json!({
        "version": 1, "name": "synthetic", "seed": 5,
        "dataset": {"name": "synthetic", "format": "idx", "train_files": ["x", "y"], "val_files": ["x", "y"],
                    "native_resolution": SIDE},
        "model": {"in_channels": 1, "stem_channels": 4,
                  "stages": [{"blocks": 1, "channels": 4, "stride": 1}, {"blocks": 1, "channels": 8, "stride": 2}],
                  "class_count": CLASSES},
        "schedule": {"epochs": epochs, "lambda": 4, "p": p, "milestones": milestones, "guard_radius": 1},
        "optimizer": {"lr": 0.05, "momentum": 0.9, "weight_decay": 1e-4},
        "batch_size": 8,
        "augmentation": {"pad_crop": 1, "horizontal_flip_prob": 0.5, "mean": [0.5], "std": [0.3]},
        "eval_resolutions": [4, 6, 8],
        "output_dir": dir,
    }))
    .unwrap()
}

fn without_time(records: &[EpochRecord]) -> Vec<EpochRecord> {
    records.iter().map(|r| EpochRecord { wall_time_s: 0.0, ..r.clone() }).collect()
}

fn weights(m: &Model<f32>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    m.state_entries()
}

fn csv_without_time(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn zero_rate_matches_fixed_resolution_training() {
    let (train, val) = (synthetic(48, 1), synthetic(24, 2));
    let (a_dir, b_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let trd = config(a_dir.path(), 6, 0.0, &[3]);
    let base = trd.with_overrides(&["schedule.enabled=false".into()]).unwrap();
    let base = ExperimentConfig { output_dir: b_dir.path().to_path_buf(), ..base };
    let a = train_on(&trd, &train, &val, &TrainOptions::default()).unwrap();
    let b = train_on(&base, &train, &val, &TrainOptions::default()).unwrap();
    assert_eq!(without_time(&a.records), without_time(&b.records));
    assert_eq!(weights(&a.last), weights(&b.last));
    assert_eq!(weights(&a.best), weights(&b.best));
    assert_eq!(
        csv_without_time(&a_dir.path().join("metrics.csv")),
        csv_without_time(&b_dir.path().join("metrics.csv"))
    );
}

#[test]
fn reruns_are_bitwise_identical() {
    let (train, val) = (synthetic(48, 1), synthetic(24, 2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 5, 0.5, &[3]);
    let dry = TrainOptions { dry: true, ..Default::default() };
    let a = train_on(&cfg, &train, &val, &dry).unwrap();
    let b = train_on(&cfg, &train, &val, &dry).unwrap();
    assert_eq!(without_time(&a.records), without_time(&b.records));
    assert_eq!(weights(&a.last), weights(&b.last));
    assert_eq!(a.manifest.schedule_fingerprint, b.manifest.schedule_fingerprint);
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none(), "dry run wrote files");
}

#[test]
fn learning_rate_steps_at_the_milestone() {
    let (train, val) = (synthetic(16, 1), synthetic(6, 2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 30, 0.5, &[15]);
    let out = train_on(&cfg, &train, &val, &TrainOptions { dry: true, ..Default::default() }).unwrap();
    let lrs: Vec<f64> = out.records.iter().map(|r| r.lr).collect();
    assert!(lrs[..15].iter().all(|&l| l == 0.05));
    assert!(lrs[15..].iter().all(|&l| (l - 0.005).abs() < 1e-15));
}

#[test]
fn records_follow_the_schedule_and_flops_add_up() {
    let (train, val) = (synthetic(48, 1), synthetic(24, 2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 10, 0.6, &[5]);
    let out = train_on(&cfg, &train, &val, &TrainOptions::default()).unwrap();
    let m = &out.manifest;
    let got: Vec<Resolution> = out.records.iter().map(|r| r.resolution).collect();
    assert_eq!(got, m.schedule.per_epoch_resolution);
    for r in &out.records {
        let per_image = if r.resolution.height == SIDE {
            m.flops.forward_per_image_native
        } else {
            m.flops.forward_per_image_reduced
        };
        assert_eq!(r.epoch_flops, per_image * (m.batches_per_epoch * cfg.batch_size) as u64);
    }
    assert!((m.flops.measured_savings - m.flops.expected_savings).abs() < 1e-6);
    assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap().len(), 10);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn best_checkpoint_holds_the_best_validation_score() {
    let (train, val) = (synthetic(48, 1), synthetic(24, 2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 6, 0.5, &[3]);
    let out = train_on(&cfg, &train, &val, &TrainOptions::default()).unwrap();
    let m = &out.manifest;
    let max = out.records.iter().map(|r| r.val_top1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(m.best_val_top1, max);
    let first_best = out.records.iter().position(|r| r.val_top1 == max).unwrap();
    assert_eq!(m.best_epoch, first_best);
    let (_, restored) = load_run_model(dir.path(), "best", false).unwrap();
    let norm = Normalization { mean: vec![0.5], std: vec![0.3] };
    let acc = evaluate(&restored, &val, Resolution::square(SIDE), ResizeMode::Bilinear, &norm).unwrap();
    assert_eq!(acc, max);
}

#[test]
fn below_minimum_reduction_aborts_before_training() {
    let (train, val) = (synthetic(16, 1), synthetic(6, 2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 4, 1.0, &[]).with_overrides(&["schedule.lambda=1".into()]).unwrap();
    let seen = std::cell::Cell::new(0);
    let cb = |_: &EpochRecord| seen.set(seen.get() + 1);
    let err = train_on(&cfg, &train, &val, &TrainOptions { on_epoch: Some(&cb), ..Default::default() });
    assert!(matches!(err, Err(Error::ResolutionBelowMinimum { .. })), "{:?}", err.err());
    assert_eq!(seen.get(), 0);
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn evaluation_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 0.0, &[]);
    let model = Model::<f32>::new(&cfg.model, 3).unwrap();
    let norm = Normalization { mean: vec![0.5], std: vec![0.3] };
    let r = Resolution::square(SIDE);
    let data = synthetic(600, 9);
    // Labels equal to the model's own predictions score 1.
    let preds = model
        .predict(trd_core::train::prepare(&data.images, r, ResizeMode::Bilinear, &norm).unwrap())
        .unwrap()
        .argmax_rows();
    let perfect = LabeledImageSet::new(data.images.clone(), preds, CLASSES, "p").unwrap();
    assert_eq!(evaluate(&model, &perfect, r, ResizeMode::Bilinear, &norm).unwrap(), 1.0);
    // Labels independent of the inputs score about 1/K.
    let mut rng = SplitMix64::new(4);
    let random: Vec<usize> = (0..600).map(|_| rng.below(CLASSES as u64) as usize).collect();
    let noise = LabeledImageSet::new(data.images.clone(), random, CLASSES, "r").unwrap();
    let acc = evaluate(&model, &noise, r, ResizeMode::Bilinear, &norm).unwrap();
    let sd = (1.0 / 3.0 * 2.0 / 3.0 / 600.0f64).sqrt();
    assert!((acc - 1.0 / 3.0).abs() < 4.0 * sd, "{acc}");
    assert!(data.truncated(0).is_err());
}

#[test]
fn stress_of_a_model_against_itself_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 0.0, &[]);
    let model = Model::<f32>::new(&cfg.model, 3).unwrap();
    let norm = Normalization { mean: vec![0.5], std: vec![0.3] };
    let res: Vec<Resolution> = [8, 2, 6, 4, 6].iter().map(|&s| Resolution::square(s)).collect();
    let rep = stress_test(&model, &model, &synthetic(30, 1), &res, ResizeMode::Bilinear, &norm).unwrap();
    let sizes: Vec<usize> = rep.rows.iter().map(|r| r.resolution.height).collect();
    assert_eq!(sizes, vec![2, 4, 6, 8]);
    assert!(rep.rows.iter().all(|r| r.improvement == 0.0));
}

#[test]
fn cam_gallery_writes_two_maps_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1, 0.0, &[]);
    let model = Model::<f32>::new(&cfg.model, 3).unwrap();
    let norm = Normalization { mean: vec![0.5], std: vec![0.3] };
    let images = synthetic(3, 1).images;
    let out = dir.path().join("cams");
    export_cam_gallery(&model, &images, ResizeMode::Bilinear, &norm, &out).unwrap();
    let names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 3 * 2 * 2 + 1);
    assert!(names.contains(&"cam_0002_4x4.pgm".to_string()));
    let pgm = std::fs::read(out.join("cam_0000_8x8.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
}
