//! The per-epoch resolution plan.
//!
//! Before training starts every epoch is assigned a resolution: epochs in the
//! reduced set train at the smaller size, all others at the native size.
//! Epoch `e` joins the reduced set when a uniform draw from its own keyed
//! stream falls below the participation rate, unless it sits within
//! `guard_radius` epochs of a learning-rate milestone. Epochs are 0-based.
//!
//! Four ablation policies share the same machinery:
//!
//! | policy             | reduced epochs            | resolution in a reduced epoch          |
//! |--------------------|---------------------------|----------------------------------------|
//! | `epoch_wise`       | random, rate `P`          | `reduced`                              |
//! | `batch_wise`       | none                      | each image independently, rate `P`     |
//! | `mix_resolution`   | random, rate `P`          | uniform integer in `[reduced, original)` |
//! | `three_resolution` | random, rate `P`          | `reduced` or the even midpoint         |
//! | `regular`          | every even epoch          | `reduced`                              |

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stream, tags};

/// Spatial size `(height, width)`. Serialized as `[h, w]`; a bare integer
/// deserializes as a square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn new(height: usize, width: usize) -> Self {
        Resolution { height, width }
    }

    pub const fn square(side: usize) -> Self {
        Resolution::new(side, side)
    }

    pub fn area(self) -> usize {
        self.height * self.width
    }

    pub fn fits_within(self, other: Resolution) -> bool {
        self.height <= other.height && self.width <= other.width
    }

    pub fn is_square(self) -> bool {
        self.height == self.width
    }

    /// Halved side lengths, never below 1.
    pub fn halved(self) -> Resolution {
        Resolution::new((self.height / 2).max(1), (self.width / 2).max(1))
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl Serialize for Resolution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.height, self.width].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Side(usize),
            Pair([usize; 2]),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Side(s) => Resolution::square(s),
            Repr::Pair([h, w]) => Resolution::new(h, w),
        })
    }
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    /// `"16"` or `"16x12"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse resolution `{s}`"));
        match s.split_once(['x', 'X']) {
            Some((h, w)) => Ok(Resolution::new(
                h.trim().parse().map_err(|_| bad())?,
                w.trim().parse().map_err(|_| bad())?,
            )),
            None => Ok(Resolution::square(s.trim().parse().map_err(|_| bad())?)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    EpochWise,
    BatchWise,
    MixResolution,
    ThreeResolution,
    Regular,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::EpochWise => "epoch_wise",
            Policy::BatchWise => "batch_wise",
            Policy::MixResolution => "mix_resolution",
            Policy::ThreeResolution => "three_resolution",
            Policy::Regular => "regular",
        }
    }
}

/// Arguments of [`build_schedule`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleParams {
    pub total_epochs: usize,
    pub original: Resolution,
    pub reduced: Resolution,
    pub participation_rate: f64,
    pub seed: u64,
    pub lr_milestones: Vec<usize>,
    pub guard_radius: usize,
    pub policy: Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_epochs: usize,
    pub original_resolution: Resolution,
    pub reduced_resolution: Resolution,
    pub participation_rate: f64,
    pub reduced_epochs: BTreeSet<usize>,
    pub guard_epochs: BTreeSet<usize>,
    pub policy: Policy,
    pub seed: u64,
    pub per_epoch_resolution: Vec<Resolution>,
}

/// Resolutions for one batch: a single entry, or one per image for `batch_wise`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchResolutionDecision {
    pub epoch: usize,
    pub batch_index: usize,
    pub per_image_resolutions: Vec<Resolution>,
}

impl BatchResolutionDecision {
    /// The shared resolution when every image agrees.
    pub fn uniform(&self) -> Option<Resolution> {
        let first = *self.per_image_resolutions.first()?;
        self.per_image_resolutions.iter().all(|&r| r == first).then_some(first)
    }
}

/// `reduced + (original - reduced) / 2`, rounded down to an even size
/// (never below `reduced`). 32 and 64 give 48.
pub fn three_resolution_midpoint(reduced: usize, original: usize) -> usize {
    let mid = reduced + (original - reduced) / 2;
    (mid - mid % 2).max(reduced)
}

fn guard_set(milestones: &[usize], radius: usize, total: usize) -> BTreeSet<usize> {
    milestones
        .iter()
        .flat_map(|&m| m.saturating_sub(radius)..=m.saturating_add(radius))
        .filter(|&e| e < total)
        .collect()
}

pub fn build_schedule(p: &ScheduleParams) -> Result<Schedule> {
    let rate = p.participation_rate;
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("participation rate {rate} outside [0, 1]")));
    }
    if p.total_epochs == 0 {
        return Err(Error::invalid("schedule needs at least one epoch"));
    }
    if p.reduced.height == 0 || p.reduced.width == 0 {
        return Err(Error::invalid("reduced resolution must be positive"));
    }
    if !p.reduced.fits_within(p.original) {
        return Err(Error::invalid(format!(
            "reduced resolution {} exceeds original {}",
            p.reduced, p.original
        )));
    }
    let guard_epochs = guard_set(&p.lr_milestones, p.guard_radius, p.total_epochs);
    let eligible = |e: &usize| !guard_epochs.contains(e);
    let reduced_epochs: BTreeSet<usize> = match p.policy {
        Policy::BatchWise => BTreeSet::new(),
        Policy::Regular => (0..p.total_epochs).filter(|e| e % 2 == 0).filter(eligible).collect(),
        Policy::EpochWise | Policy::MixResolution | Policy::ThreeResolution => (0..p.total_epochs)
            .filter(eligible)
            .filter(|&e| stream(p.seed, tags::EPOCH_SELECT, e as u64, 0).next_f64() < rate)
            .collect(),
    };
    let per_epoch_resolution = (0..p.total_epochs)
        .map(|e| {
            if !reduced_epochs.contains(&e) {
                return p.original;
            }
            let mut rng = stream(p.seed, tags::VARIANT_RESOLUTION, e as u64, 0);
            match p.policy {
                Policy::MixResolution => {
                    let mut draw = |lo: usize, hi: usize| {
                        if hi > lo {
                            lo + rng.below((hi - lo) as u64) as usize
                        } else {
                            lo
                        }
                    };
                    let h = draw(p.reduced.height, p.original.height);
                    let w = if p.reduced.is_square() && p.original.is_square() {
                        h
                    } else {
                        draw(p.reduced.width, p.original.width)
                    };
                    Resolution::new(h, w)
                }
                Policy::ThreeResolution => {
                    if rng.below(2) == 0 {
                        p.reduced
                    } else {
                        Resolution::new(
                            three_resolution_midpoint(p.reduced.height, p.original.height),
                            three_resolution_midpoint(p.reduced.width, p.original.width),
                        )
                    }
                }
                _ => p.reduced,
            }
        })
        .collect();
    Ok(Schedule {
        total_epochs: p.total_epochs,
        original_resolution: p.original,
        reduced_resolution: p.reduced,
        participation_rate: rate,
        reduced_epochs,
        guard_epochs,
        policy: p.policy,
        seed: p.seed,
        per_epoch_resolution,
    })
}

impl Schedule {
    /// A plan that never reduces: plain fixed-resolution training.
    pub fn fixed(total_epochs: usize, original: Resolution, seed: u64) -> Result<Schedule> {
        build_schedule(&ScheduleParams {
            total_epochs,
            original,
            reduced: original,
            participation_rate: 0.0,
            seed,
            lr_milestones: vec![],
            guard_radius: 0,
            policy: Policy::EpochWise,
        })
    }

    pub fn epoch_resolution(&self, epoch: usize) -> Result<Resolution> {
        self.per_epoch_resolution.get(epoch).copied().ok_or_else(|| {
            Error::invalid(format!("epoch {epoch} outside schedule of {} epochs", self.total_epochs))
        })
    }

    /// Resolution(s) for batch `batch_index` of `epoch`.
    pub fn resolution_for(&self, epoch: usize, batch_index: usize, batch_size: usize) -> Result<BatchResolutionDecision> {
        let epoch_res = self.epoch_resolution(epoch)?;
        let per_image_resolutions = match self.policy {
            Policy::BatchWise if !self.guard_epochs.contains(&epoch) => {
                let mut rng = stream(self.seed, tags::BATCH_WISE, epoch as u64, batch_index as u64);
                (0..batch_size)
                    .map(|_| {
                        if rng.next_f64() < self.participation_rate {
                            self.reduced_resolution
                        } else {
                            self.original_resolution
                        }
                    })
                    .collect()
            }
            _ => vec![epoch_res],
        };
        Ok(BatchResolutionDecision {
            epoch,
            batch_index,
            per_image_resolutions,
        })
    }

    /// Expected fraction of training images per epoch seen at each resolution.
    /// For every policy but `batch_wise` this is a single resolution with weight 1.
    pub fn epoch_mixture(&self, epoch: usize) -> Result<Vec<(Resolution, f64)>> {
        let res = self.epoch_resolution(epoch)?;
        Ok(match self.policy {
            Policy::BatchWise if !self.guard_epochs.contains(&epoch) => vec![
                (self.original_resolution, 1.0 - self.participation_rate),
                (self.reduced_resolution, self.participation_rate),
            ],
            _ => vec![(res, 1.0)],
        })
    }

    /// Hex SHA-256 over the per-epoch plan, the policy and the seed
    /// (plus rate and reduced size for `batch_wise`, whose plan is per image).
    pub fn fingerprint(&self) -> String {
        let mut doc = serde_json::json!({
            "per_epoch_resolution": self.per_epoch_resolution,
            "policy": self.policy,
            "seed": self.seed,
        });
        if self.policy == Policy::BatchWise {
            doc["participation_rate"] = serde_json::json!(self.participation_rate);
            doc["reduced_resolution"] = serde_json::json!(self.reduced_resolution);
        }
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }
}
