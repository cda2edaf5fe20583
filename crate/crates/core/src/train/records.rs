//! Per-epoch records, the metrics CSV and the run manifest.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::schedule::{Resolution, Schedule};

pub const METRICS_HEADER: &str = "epoch,resolution_h,resolution_w,lr,train_loss,train_top1,val_top1,epoch_flops,wall_time_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// The scheduled resolution of the epoch.
    pub resolution: Resolution,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    /// Forward MACs of every training image processed this epoch.
    pub epoch_flops: u64,
    /// Training time only; validation is excluded.
    pub wall_time_s: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.resolution.height,
            self.resolution.width,
            self.lr,
            self.train_loss,
            self.train_top1,
            self.val_top1,
            self.epoch_flops,
            self.wall_time_s
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::invalid(format!("bad metrics row `{line}`"));
        if f.len() != 9 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad());
        Ok(EpochRecord {
            epoch: int(0)? as usize,
            resolution: Resolution::new(int(1)? as usize, int(2)? as usize),
            lr: num(3)?,
            train_loss: num(4)?,
            train_top1: num(5)?,
            val_top1: num(6)?,
            epoch_flops: int(7)?,
            wall_time_s: num(8)?,
        })
    }
}

/// Append-only CSV writer.
pub struct MetricsWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "{METRICS_HEADER}")?;
        file.flush()?;
        Ok(MetricsWriter { file })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        writeln!(self.file, "{}", r.csv_row())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::invalid(format!("{} does not start with the metrics header", path.display())));
    }
    lines.filter(|l| !l.trim().is_empty()).map(EpochRecord::from_csv_row).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingFlops {
    pub total: f64,
    pub mean_per_epoch: f64,
}

pub fn measured_training_flops(records: &[EpochRecord]) -> Result<TrainingFlops> {
    if records.is_empty() {
        return Err(Error::invalid("no epoch records"));
    }
    let total: f64 = records.iter().map(|r| r.epoch_flops as f64).sum();
    Ok(TrainingFlops {
        total,
        mean_per_epoch: total / records.len() as f64,
    })
}

/// `1 - mean_per_epoch / baseline_per_epoch`.
pub fn savings_fraction(records: &[EpochRecord], baseline_per_epoch: f64) -> Result<f64> {
    Ok(1.0 - measured_training_flops(records)?.mean_per_epoch / baseline_per_epoch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub experiment: u64,
    pub schedule: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsSummary {
    pub convention: String,
    pub forward_per_image_native: u64,
    pub forward_per_image_reduced: u64,
    /// Schedule-weighted forward MACs per image.
    pub expected_mflops: f64,
    pub expected_savings: f64,
    pub measured: TrainingFlops,
    pub measured_savings: f64,
    /// Multiply forward figures by this for forward plus backward.
    pub train_forward_multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool: String,
    pub config: ExperimentConfig,
    pub overrides: Vec<String>,
    pub config_hash: String,
    pub model_config_hash: String,
    pub seeds: Seeds,
    pub schedule: Schedule,
    pub schedule_fingerprint: String,
    pub train_samples: usize,
    pub val_samples: usize,
    pub batches_per_epoch: usize,
    pub flops: FlopsSummary,
    pub records: Vec<EpochRecord>,
    pub best_val_top1: f64,
    pub best_epoch: usize,
    pub final_val_top1: f64,
    /// Which weights later stress tests and CAM exports read.
    pub evaluation_weights: String,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
