//! Small on-disk fixtures shared by the CLI test targets.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use trd_core::data::idx::{write_idx_images, write_idx_labels, IdxImages};
use trd_core::rng::SplitMix64;

pub const SIDE: usize = 8;
pub const CLASSES: usize = 3;

pub fn trd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trd"))
}

pub fn run(args: &[&str]) -> Output {
    trd().args(args).output().expect("trd binary runs")
}

/// Three band patterns plus noise, written as IDX image/label files.
pub fn write_dataset(dir: &Path, n: usize, seed: u64, prefix: &str) {
    let mut rng = SplitMix64::new(seed);
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % CLASSES;
        labels.push(k as u8);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let on = match k {
                    0 => y < SIDE / 2,
                    1 => x < SIDE / 2,
                    _ => (x + y) % 2 == 0,
                };
                let base = if on { 200.0 } else { 50.0 };
                pixels.push((base + 40.0 * (rng.next_f64() - 0.5)) as u8);
            }
        }
    }
    let images = IdxImages { count: n, height: SIDE, width: SIDE, pixels };
    std::fs::write(dir.join(format!("{prefix}-images.idx")), write_idx_images(&images)).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels.idx")), write_idx_labels(&labels)).unwrap();
}

/// Dataset plus a config pointing at it; returns the config path.
pub fn fixture(dir: &Path, epochs: usize, p: f64) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_dataset(&data, 48, 1, "train");
    write_dataset(&data, 24, 2, "val");
    let cfg = config_doc(&data, &dir.join("run"), epochs, p);
    let path = dir.join("exp.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn config_doc(data: &Path, out: &Path, epochs: usize, p: f64) -> Value {
    json!({
        "version": 1, "name": "fixture", "seed": 3,
        "dataset": {"name": "fixture", "format": "idx", "root": data,
                    "train_files": ["train-images.idx", "train-labels.idx"],
                    "val_files": ["val-images.idx", "val-labels.idx"],
                    "native_resolution": SIDE},
        "model": {"in_channels": 1, "stem_channels": 4,
                  "stages": [{"blocks": 1, "channels": 4, "stride": 1}, {"blocks": 1, "channels": 8, "stride": 2}],
                  "class_count": CLASSES},
        "schedule": {"epochs": epochs, "lambda": 4, "p": p, "milestones": [epochs / 2], "guard_radius": 0},
        "optimizer": {"lr": 0.05, "momentum": 0.9, "weight_decay": 1e-4},
        "batch_size": 8,
        "augmentation": {"pad_crop": 1, "horizontal_flip_prob": 0.5, "mean": [0.5], "std": [0.3]},
        "eval_resolutions": [4, 6, 8],
        "output_dir": out,
    })
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// metrics.csv with the trailing wall-time column removed.
pub fn metrics_without_time(run: &Path) -> Vec<String> {
    std::fs::read_to_string(run.join("metrics.csv"))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}
