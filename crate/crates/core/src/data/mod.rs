//! Datasets: binary parsers, resizing, augmentation and downloads.

pub mod augment;
pub mod cifar;
pub mod fetch;
pub mod idx;
pub mod resize;

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use augment::{augment_batch, normalize, AugmentationPolicy, AugmentedBatch};
pub use resize::{resize, ResizeMode};

use crate::error::{Error, Result};
use crate::schedule::Resolution;
use crate::tensor::Tensor;

/// Images as `[N, C, H, W]` with pixel bytes scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub native_resolution: Resolution,
    pub name: String,
}

fn scale(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

impl LabeledImageSet {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_count: usize, name: impl Into<String>) -> Result<Self> {
        let (n, _, h, w) = images.dims4()?;
        if labels.len() != n {
            return Err(Error::shape(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(LabeledImageSet {
            images,
            labels,
            class_count,
            native_resolution: Resolution::new(h, w),
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    /// The first `limit` samples (all of them when `limit` is larger).
    pub fn truncated(&self, limit: usize) -> Result<Self> {
        if limit >= self.len() {
            return Ok(self.clone());
        }
        let idx: Vec<usize> = (0..limit).collect();
        let (images, labels) = self.gather(&idx)?;
        LabeledImageSet::new(images, labels, self.class_count, self.name.clone())
    }

    pub fn concat(parts: Vec<LabeledImageSet>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("no dataset parts to join"))?;
        let (c, res, classes, name) = (first.channels(), first.native_resolution, first.class_count, first.name.clone());
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.channels() != c || p.native_resolution != res {
                return Err(Error::shape("dataset parts disagree on image shape"));
            }
            labels.extend(p.labels);
            data.extend(p.images.into_data());
        }
        let images = Tensor::from_vec(vec![labels.len(), c, res.height, res.width], data)?;
        LabeledImageSet::new(images, labels, classes, name)
    }

    pub fn from_idx(images: &idx::IdxImages, labels: &[u8], class_count: usize, name: &str) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::shape(format!("{} images but {} labels", images.count, labels.len())));
        }
        let t = Tensor::from_vec(vec![images.count, 1, images.height, images.width], scale(&images.pixels))?;
        LabeledImageSet::new(t, labels.iter().map(|&l| l as usize).collect(), class_count, name)
    }

    pub fn from_cifar(batch: &cifar::CifarBatch, class_count: usize, name: &str) -> Result<Self> {
        let n = batch.labels.len();
        let t = Tensor::from_vec(vec![n, 3, cifar::SIDE, cifar::SIDE], scale(&batch.pixels))?;
        LabeledImageSet::new(t, batch.labels.iter().map(|&l| l as usize).collect(), class_count, name)
    }
}

/// Parse an IDX image file and label file into one set. The class count is
/// one more than the largest label.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<LabeledImageSet> {
    let images = idx::parse_idx_images(image_bytes)?;
    let labels = idx::parse_idx_labels(label_bytes)?;
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    LabeledImageSet::from_idx(&images, &labels, classes, "idx")
}

pub fn parse_cifar_batch(bytes: &[u8], coarse: bool) -> Result<LabeledImageSet> {
    let batch = cifar::parse_cifar_batch(bytes, coarse)?;
    let (classes, name) = if coarse { (100, "cifar100") } else { (10, "cifar10") };
    LabeledImageSet::from_cifar(&batch, classes, name)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// Two files: images then labels.
    Idx,
    Cifar10,
    Cifar100,
}

/// Read a file, inflating it first when the name ends in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let raw = std::fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Load one split from `root`. IDX takes `[images, labels]`; CIFAR takes
/// any number of batch files, concatenated in order.
pub fn load_split(format: DatasetFormat, root: &Path, files: &[String], class_count: usize, name: &str) -> Result<LabeledImageSet> {
    match format {
        DatasetFormat::Idx => {
            let [img, lab] = files else {
                return Err(Error::config("dataset.files", "IDX needs exactly [images, labels]"));
            };
            let images = idx::parse_idx_images(&read_maybe_gz(&root.join(img))?)?;
            let labels = idx::parse_idx_labels(&read_maybe_gz(&root.join(lab))?)?;
            LabeledImageSet::from_idx(&images, &labels, class_count, name)
        }
        DatasetFormat::Cifar10 | DatasetFormat::Cifar100 => {
            let coarse = format == DatasetFormat::Cifar100;
            let parts = files
                .iter()
                .map(|f| {
                    let batch = cifar::parse_cifar_batch(&read_maybe_gz(&root.join(f))?, coarse)?;
                    LabeledImageSet::from_cifar(&batch, class_count, name)
                })
                .collect::<Result<Vec<_>>>()?;
            LabeledImageSet::concat(parts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_pair_scales_to_unit_interval() {
        let img = idx::IdxImages {
            count: 2,
            height: 3,
            width: 3,
            pixels: (0..18).map(|v| if v == 4 { 255 } else { 0 }).collect(),
        };
        let set = parse_idx(&idx::write_idx_images(&img), &idx::write_idx_labels(&[1, 4])).unwrap();
        assert_eq!(set.images.shape(), &[2, 1, 3, 3]);
        assert_eq!(set.images.data()[4], 1.0);
        assert_eq!(set.class_count, 5);
        assert_eq!(set.native_resolution, Resolution::square(3));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let img = idx::IdxImages { count: 1, height: 1, width: 1, pixels: vec![0] };
        assert!(parse_idx(&idx::write_idx_images(&img), &idx::write_idx_labels(&[0, 1])).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_split(DatasetFormat::Idx, Path::new("/nonexistent"), &["a".into(), "b".into()], 10, "x").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/a"), "{err}");
    }

    #[test]
    fn gz_files_are_inflated() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&idx::write_idx_labels(&[2, 0])).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        assert_eq!(idx::parse_idx_labels(&read_maybe_gz(&path).unwrap()).unwrap(), vec![2, 0]);
    }
}
