//! Evaluation at arbitrary resolutions, stress reports and CAM galleries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::augment::normalize_in_place;
use crate::data::{resize, LabeledImageSet, ResizeMode};
use crate::error::{Error, Result};
use crate::model::cam::{cam, write_csv, write_pgm};
use crate::model::Model;
use crate::schedule::Resolution;
use crate::tensor::{Scalar, Tensor};

const EVAL_BATCH: usize = 500;

/// Per-channel normalization applied before every forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Resize raw `[0, 1]` images to `r`, normalize, cast.
pub fn prepare<T: Scalar>(images: &Tensor<f32>, r: Resolution, mode: ResizeMode, norm: &Normalization) -> Result<Tensor<T>> {
    let mut x = resize(images, r.height, r.width, mode)?;
    normalize_in_place(&mut x, &norm.mean, &norm.std)?;
    Ok(x.cast())
}

/// Top-1 accuracy over the whole set, evaluation-mode batch norm.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    dataset: &LabeledImageSet,
    resolution: Resolution,
    mode: ResizeMode,
    norm: &Normalization,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    model.config().check_resolution(resolution)?;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (images, labels) = dataset.gather(chunk)?;
        let logits = model.predict(prepare(&images, resolution, mode, norm)?)?;
        correct += logits.argmax_rows().iter().zip(&labels).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub resolution: Resolution,
    pub trd_top1: f64,
    pub baseline_top1: f64,
    /// `trd_top1 - baseline_top1`.
    pub improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub rows: Vec<StressRow>,
}

impl StressReport {
    pub fn row(&self, r: Resolution) -> Option<&StressRow> {
        self.rows.iter().find(|x| x.resolution == r)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("resolution_h,resolution_w,trd_top1,baseline_top1,improvement\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{}\n",
                r.resolution.height, r.resolution.width, r.trd_top1, r.baseline_top1, r.improvement
            );
        }
        s
    }
}

/// Both models at every requested resolution, ascending and de-duplicated.
pub fn stress_test<T: Scalar>(
    trd: &Model<T>,
    baseline: &Model<T>,
    dataset: &LabeledImageSet,
    resolutions: &[Resolution],
    mode: ResizeMode,
    norm: &Normalization,
) -> Result<StressReport> {
    if trd.config().class_count != baseline.config().class_count {
        return Err(Error::invalid("stress test needs models with the same class count"));
    }
    let mut res = resolutions.to_vec();
    res.sort();
    res.dedup();
    let rows = res
        .into_iter()
        .map(|r| {
            let a = evaluate(trd, dataset, r, mode, norm)?;
            let b = evaluate(baseline, dataset, r, mode, norm)?;
            Ok(StressRow {
                resolution: r,
                trd_top1: a,
                baseline_top1: b,
                improvement: a - b,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StressReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub image: usize,
    pub resolution: Resolution,
    pub class_index: usize,
    pub pgm: String,
    pub csv: String,
}

/// For each image, a CAM at the native size and at half of it, for the class
/// predicted at the native size. Writes `index.json` alongside.
pub fn export_cam_gallery<T: Scalar>(
    model: &Model<T>,
    images: &Tensor<f32>,
    mode: ResizeMode,
    norm: &Normalization,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (n, _, h, w) = images.dims4()?;
    std::fs::create_dir_all(out_dir)?;
    let native = Resolution::new(h, w);
    let resolutions = [native, native.halved()];
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for i in 0..n {
        let one = images.select_rows(&[i])?;
        let class_index = model.predict(prepare(&one, native, mode, norm)?)?.argmax_rows()[0];
        for r in resolutions {
            let map = cam(model, &prepare::<T>(&one, r, mode, norm)?, class_index)?;
            let stem = format!("cam_{i:04}_{}x{}", r.height, r.width);
            let (pgm, csv) = (format!("{stem}.pgm"), format!("{stem}.csv"));
            write_pgm(&out_dir.join(&pgm), &map)?;
            write_csv(&out_dir.join(&csv), &map)?;
            files.push(out_dir.join(&pgm));
            files.push(out_dir.join(&csv));
            entries.push(GalleryEntry {
                image: i,
                resolution: r,
                class_index,
                pgm,
                csv,
            });
        }
    }
    let index = out_dir.join("index.json");
    std::fs::write(&index, serde_json::to_string_pretty(&entries)?)?;
    files.push(index);
    Ok(files)
}
