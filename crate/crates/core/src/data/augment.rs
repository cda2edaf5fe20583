//! Training-time augmentation.
//!
//! Per batch the steps run in a fixed order: pad-and-crop, horizontal flip,
//! resize to the scheduled resolution, cutout, per-channel normalization and
//! finally mixup. Cutout zeroes raw pixels before normalization, and its side
//! scales with the scheduled resolution so the masked fraction stays put.

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::resize::{resize_plane, ResizeMode};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::schedule::Resolution;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    #[serde(default)]
    pub pad_crop: Option<usize>,
    #[serde(default)]
    pub horizontal_flip_prob: f64,
    #[serde(default)]
    pub cutout: Option<usize>,
    #[serde(default)]
    pub mixup_alpha: Option<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AugmentationPolicy {
    /// No augmentation, identity normalization.
    pub fn identity(channels: usize) -> Self {
        AugmentationPolicy {
            pad_crop: None,
            horizontal_flip_prob: 0.0,
            cutout: None,
            mixup_alpha: None,
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn validate(&self, channels: usize, native: Resolution) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(Error::config("augmentation.horizontal_flip_prob", "must lie in [0, 1]"));
        }
        if let Some(side) = self.cutout {
            if side == 0 || side > native.height.min(native.width) {
                return Err(Error::config(
                    "augmentation.cutout",
                    format!("side {side} must be in [1, {}]", native.height.min(native.width)),
                ));
            }
        }
        if let Some(alpha) = self.mixup_alpha {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::config("augmentation.mixup_alpha", "must be positive"));
            }
        }
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::config(
                "augmentation.mean",
                format!("mean/std need {channels} entries, got {}/{}", self.mean.len(), self.std.len()),
            ));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("augmentation.std", "every std must be positive"));
        }
        Ok(())
    }
}

/// `(x - mean[c]) / std[c]` per channel.
pub fn normalize<T: Scalar>(images: &Tensor<T>, mean: &[f64], std: &[f64]) -> Result<Tensor<T>> {
    let mut out = images.clone();
    normalize_in_place(&mut out, mean, std)?;
    Ok(out)
}

pub fn normalize_in_place<T: Scalar>(images: &mut Tensor<T>, mean: &[f64], std: &[f64]) -> Result<()> {
    let (_, c, h, w) = images.dims4()?;
    if mean.len() != c || std.len() != c {
        return Err(Error::shape(format!("normalize: {c} channels, {} means, {} stds", mean.len(), std.len())));
    }
    if let Some(s) = std.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::invalid(format!("normalize: std {s} must be positive")));
    }
    for (i, plane) in images.data_mut().chunks_mut(h * w).enumerate() {
        let (m, s) = (T::of(mean[i % c]), T::of(std[i % c]));
        for v in plane {
            *v = (*v - m) / s;
        }
    }
    Ok(())
}

/// Blend each image with image `perm[i]` by weight `lam`, and the targets alike.
pub fn mixup<T: Scalar>(images: &mut Tensor<T>, targets: &mut [T], classes: usize, lam: f64, perm: &[usize]) {
    let n = perm.len();
    let per = images.len() / n;
    let (a, b) = (T::of(lam), T::of(1.0 - lam));
    let src_x = images.data().to_vec();
    let src_y = targets.to_vec();
    for (i, &j) in perm.iter().enumerate() {
        for (k, v) in images.data_mut()[i * per..(i + 1) * per].iter_mut().enumerate() {
            *v = a * src_x[i * per + k] + b * src_x[j * per + k];
        }
        for (k, v) in targets[i * classes..(i + 1) * classes].iter_mut().enumerate() {
            *v = a * src_y[i * classes + k] + b * src_y[j * classes + k];
        }
    }
}

pub struct AugmentedBatch<T> {
    pub images: Tensor<T>,
    /// `[N, classes]` probability rows.
    pub targets: Vec<T>,
}

/// Apply `policy` to a native-resolution batch and emit it at `target`.
pub fn augment_batch<T: Scalar>(
    images: &Tensor<T>,
    labels: &[usize],
    classes: usize,
    policy: &AugmentationPolicy,
    target: Resolution,
    resize_mode: ResizeMode,
    rng: &mut SplitMix64,
) -> Result<AugmentedBatch<T>> {
    let (n, c, h, w) = images.dims4()?;
    if labels.len() != n {
        return Err(Error::shape(format!("{n} images but {} labels", labels.len())));
    }
    policy.validate(c, Resolution::new(h, w))?;
    let (th, tw) = (target.height, target.width);
    if th == 0 || tw == 0 {
        return Err(Error::invalid("augment target resolution must be positive"));
    }
    let src = images.data();
    let mut out = vec![T::zero(); n * c * th * tw];
    let mut work = vec![T::zero(); h * w];
    let cutout = policy
        .cutout
        .map(|side| ((side as f64 * th as f64 / h as f64).round() as usize).clamp(1, th.min(tw)));
    for i in 0..n {
        let (dy, dx) = match policy.pad_crop {
            Some(p) if p > 0 => (rng.below(2 * p as u64 + 1) as isize - p as isize, rng.below(2 * p as u64 + 1) as isize - p as isize),
            _ => (0, 0),
        };
        let flip = policy.horizontal_flip_prob > 0.0 && rng.next_f64() < policy.horizontal_flip_prob;
        let cut_at = cutout.map(|_| (rng.below(th as u64) as usize, rng.below(tw as u64) as usize));
        for ch in 0..c {
            let plane = &src[(i * c + ch) * h * w..][..h * w];
            for y in 0..h {
                let sy = y as isize + dy;
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx;
                    work[y * w + x] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        plane[sy as usize * w + sx as usize]
                    } else {
                        T::zero()
                    };
                }
            }
            let dst = &mut out[(i * c + ch) * th * tw..][..th * tw];
            resize_plane(&work, h, w, dst, th, tw, resize_mode);
            if let (Some(side), Some((cy, cx))) = (cutout, cut_at) {
                let y0 = cy.saturating_sub(side / 2);
                let x0 = cx.saturating_sub(side / 2);
                let y1 = (cy + side.div_ceil(2)).min(th);
                let x1 = (cx + side.div_ceil(2)).min(tw);
                for y in y0..y1 {
                    dst[y * tw + x0..y * tw + x1].fill(T::zero());
                }
            }
        }
    }
    let mut images = Tensor::from_vec(vec![n, c, th, tw], out)?;
    normalize_in_place(&mut images, &policy.mean, &policy.std)?;
    let mut targets = vec![T::zero(); n * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} out of range [0, {classes})")));
        }
        targets[i * classes + y] = T::one();
    }
    if let Some(alpha) = policy.mixup_alpha {
        let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(e.to_string()))?;
        let lam = beta.sample(rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        mixup(&mut images, &mut targets, classes, lam, &perm);
    }
    Ok(AugmentedBatch { images, targets })
}
