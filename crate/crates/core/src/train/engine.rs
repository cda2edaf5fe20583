//! The epoch loop.
//!
//! Every random choice is keyed by `(seed, purpose, epoch, batch)`: the
//! sample order by `data/shuffle`, augmentation by `data/augment`, weight
//! init by `model/init`, the resolution plan by the schedule streams. A run
//! with a never-reducing schedule therefore replays plain training exactly.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde_json::json;

use super::config::{ExperimentConfig, Precision};
use super::eval::{evaluate, Normalization};
use super::records::{measured_training_flops, EpochRecord, FlopsSummary, MetricsWriter, RunManifest, Seeds};
use crate::autograd::{Sgd, Tape};
use crate::data::{augment_batch, load_split, LabeledImageSet};
use crate::error::{Error, Result};
use crate::model::checkpoint::{config_hash, json_digest, Checkpoint};
use crate::model::flops::TRAIN_FORWARD_MULTIPLIER;
use crate::model::{flops_at_resolution, mflops, Model};
use crate::rng::{stream, tags};
use crate::schedule::{Policy, Resolution, Schedule};
use crate::tensor::Scalar;

/// Optional knobs that are not part of the experiment itself.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Recorded verbatim in the manifest.
    pub overrides: Vec<String>,
    /// Skip every file write (manifest, metrics, checkpoints).
    pub dry: bool,
    pub on_epoch: Option<&'a dyn Fn(&EpochRecord)>,
}

pub struct TrainOutcome {
    pub best: Model<f32>,
    pub last: Model<f32>,
    pub records: Vec<EpochRecord>,
    pub manifest: RunManifest,
}

/// Load the train and validation splits named by `config`.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let d = &config.dataset;
    let root = d.root_dir();
    let classes = config.model.class_count;
    let mut train = load_split(d.format, &root, &d.train_files, classes, &d.name)?;
    let mut val = load_split(d.format, &root, &d.val_files, classes, &d.name)?;
    if let Some(n) = d.train_limit {
        train = train.truncated(n)?;
    }
    if let Some(n) = d.val_limit {
        val = val.truncated(n)?;
    }
    for set in [&train, &val] {
        if set.native_resolution != d.native_resolution {
            return Err(Error::config(
                "dataset.native_resolution",
                format!("declared {} but files hold {}", d.native_resolution, set.native_resolution),
            ));
        }
        if set.channels() != config.model.in_channels {
            return Err(Error::config("model.in_channels", format!("dataset has {} channels", set.channels())));
        }
    }
    Ok((train, val))
}

/// Load data and train.
pub fn train(config: &ExperimentConfig, opts: &TrainOptions<'_>) -> Result<TrainOutcome> {
    let (train_set, val_set) = load_datasets(config)?;
    train_on(config, &train_set, &val_set, opts)
}

/// Train on already loaded data.
pub fn train_on(
    config: &ExperimentConfig,
    train_set: &LabeledImageSet,
    val_set: &LabeledImageSet,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    match config.precision {
        Precision::F32 => run::<f32>(config, train_set, val_set, opts),
        Precision::F64 => run::<f64>(config, train_set, val_set, opts),
    }
}

/// Every resolution the schedule can hand out must suit the model.
fn check_schedule(config: &ExperimentConfig, schedule: &Schedule) -> Result<()> {
    let mut all: Vec<Resolution> = schedule.per_epoch_resolution.clone();
    if schedule.policy == Policy::BatchWise {
        all.push(schedule.reduced_resolution);
    }
    for r in all {
        config.model.check_resolution(r)?;
    }
    Ok(())
}

fn run<T: Scalar>(
    config: &ExperimentConfig,
    train_set: &LabeledImageSet,
    val_set: &LabeledImageSet,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    let schedule = config.build_schedule()?;
    check_schedule(config, &schedule)?;
    let native = config.native();
    let classes = config.model.class_count;
    let bs = config.batch_size;
    let batches = train_set.len() / bs;
    if batches == 0 {
        return Err(Error::config(
            "batch_size",
            format!("{} training samples cannot fill one batch of {bs}", train_set.len()),
        ));
    }
    let out_dir = config.output_dir.as_path();
    let mut metrics = if opts.dry {
        None
    } else {
        std::fs::create_dir_all(out_dir)?;
        Some(MetricsWriter::create(&out_dir.join("metrics.csv"))?)
    };
    let norm = Normalization {
        mean: config.augmentation.mean.clone(),
        std: config.augmentation.std.clone(),
    };
    let mut flops_cache: BTreeMap<Resolution, u64> = BTreeMap::new();
    let mut flops_of = |r: Resolution| -> Result<u64> {
        if let Some(&f) = flops_cache.get(&r) {
            return Ok(f);
        }
        let f = flops_at_resolution(&config.model, r)?;
        flops_cache.insert(r, f);
        Ok(f)
    };

    let mut model = Model::<T>::new(&config.model, config.seed)?;
    let mut best = model.clone();
    let (mut best_val, mut best_epoch) = (f64::NEG_INFINITY, 0);
    let mut records = Vec::with_capacity(schedule.total_epochs);

    for epoch in 0..schedule.total_epochs {
        let lr = config.lr_at(epoch);
        let sgd = Sgd {
            lr,
            momentum: config.optimizer.momentum,
            weight_decay: config.optimizer.weight_decay,
        };
        let epoch_res = schedule.epoch_resolution(epoch)?;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(config.seed, tags::SHUFFLE, epoch as u64, 0));
        let started = Instant::now();
        let (mut loss_sum, mut correct, mut seen, mut epoch_flops) = (0.0f64, 0usize, 0usize, 0u64);

        for b in 0..batches {
            let batch_idx = &order[b * bs..(b + 1) * bs];
            let decision = schedule.resolution_for(epoch, b, bs)?;
            if schedule.policy != Policy::BatchWise && decision.uniform() != Some(epoch_res) {
                return Err(Error::invalid(format!("epoch {epoch} batch {b} left the epoch resolution")));
            }
            // Images sharing a resolution form one sub-batch; only the
            // per-image policy ever produces more than one.
            let mut groups: Vec<(Resolution, Vec<usize>)> = Vec::new();
            if let [r] = decision.per_image_resolutions[..] {
                groups.push((r, batch_idx.to_vec()));
            } else {
                for (&sample, &r) in batch_idx.iter().zip(&decision.per_image_resolutions) {
                    match groups.iter_mut().find(|(g, _)| *g == r) {
                        Some((_, v)) => v.push(sample),
                        None => groups.push((r, vec![sample])),
                    }
                }
            }
            let mut aug_rng = stream(config.seed, tags::AUGMENT, epoch as u64, b as u64);
            for (r, idx) in &groups {
                let (images, labels) = train_set.gather(idx)?;
                let aug = augment_batch(
                    &images.cast::<T>(),
                    &labels,
                    classes,
                    &config.augmentation,
                    *r,
                    config.schedule.resize_mode,
                    &mut aug_rng,
                )?;
                let mut targets = aug.targets;
                if config.label_smoothing > 0.0 {
                    let (keep, spread) = (T::of(1.0 - config.label_smoothing), T::of(config.label_smoothing / classes as f64));
                    targets.iter_mut().for_each(|q| *q = keep * *q + spread);
                }
                let mut tape = Tape::new();
                let vars = model.forward_train(&mut tape, aug.images)?;
                let loss = tape.soft_cross_entropy(vars.logits, targets)?;
                let loss_value = tape.value(loss).data()[0].as_f64();
                if !loss_value.is_finite() {
                    if !opts.dry {
                        let snapshot = json!({
                            "epoch": epoch, "batch": b, "loss": loss_value.to_string(),
                            "lr": lr, "resolution": r, "samples": idx,
                        });
                        std::fs::write(out_dir.join("abort_snapshot.json"), serde_json::to_string_pretty(&snapshot)?)?;
                    }
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
                }
                let n = idx.len();
                correct += tape
                    .value(vars.logits)
                    .argmax_rows()
                    .iter()
                    .zip(&labels)
                    .filter(|(p, y)| p == y)
                    .count();
                loss_sum += loss_value * n as f64;
                seen += n;
                epoch_flops += flops_of(*r)? * n as u64;
                model.accumulate_gradients(&mut tape, &vars, loss, T::of(n as f64 / bs as f64))?;
            }
            model.step(&sgd)?;
        }
        let wall_time_s = started.elapsed().as_secs_f64();
        let val_top1 = evaluate(&model, val_set, native, config.eval_resize_mode, &norm)?;
        let record = EpochRecord {
            epoch,
            resolution: epoch_res,
            lr,
            train_loss: loss_sum / seen as f64,
            train_top1: correct as f64 / seen as f64,
            val_top1,
            epoch_flops,
            wall_time_s,
        };
        if val_top1 > best_val {
            best_val = val_top1;
            best_epoch = epoch;
            best = model.clone();
            if !opts.dry {
                Checkpoint::from_model(&best)?.save(&out_dir.join("best.ckpt"))?;
            }
        }
        if let Some(m) = metrics.as_mut() {
            m.append(&record)?;
        }
        if let Some(cb) = opts.on_epoch {
            cb(&record);
        }
        records.push(record);
    }

    let f_native = flops_of(native)?;
    let f_reduced = flops_of(schedule.reduced_resolution)?;
    let expected = mflops(&schedule, |r| Ok(flops_of(r)? as f64))?;
    let measured = measured_training_flops(&records)?;
    let per_epoch_baseline = f_native as f64 * (batches * bs) as f64;
    let manifest = RunManifest {
        version: 1,
        tool: format!("trd {}", env!("CARGO_PKG_VERSION")),
        config: config.clone(),
        overrides: opts.overrides.clone(),
        config_hash: json_digest(config)?,
        model_config_hash: config_hash(&config.model)?,
        seeds: Seeds {
            experiment: config.seed,
            schedule: config.schedule_seed(),
        },
        schedule_fingerprint: schedule.fingerprint(),
        schedule,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        batches_per_epoch: batches,
        flops: FlopsSummary {
            convention: "forward multiply-accumulates per image; BN/ReLU/add/pool/resize excluded".into(),
            forward_per_image_native: f_native,
            forward_per_image_reduced: f_reduced,
            expected_mflops: expected,
            expected_savings: 1.0 - expected / f_native as f64,
            measured,
            measured_savings: 1.0 - measured.mean_per_epoch / per_epoch_baseline,
            train_forward_multiplier: TRAIN_FORWARD_MULTIPLIER,
        },
        final_val_top1: records.last().map_or(0.0, |r| r.val_top1),
        records: records.clone(),
        best_val_top1: best_val,
        best_epoch,
        evaluation_weights: "best_val".into(),
    };
    if !opts.dry {
        Checkpoint::from_model(&model)?.save(&out_dir.join("last.ckpt"))?;
        manifest.save(&out_dir.join("manifest.json"))?;
    }
    Ok(TrainOutcome {
        best: best.cast(),
        last: model.cast(),
        records,
        manifest,
    })
}

/// Restore the model a finished run saved (`best.ckpt` or `last.ckpt`).
pub fn load_run_model(run_dir: &Path, which: &str, force: bool) -> Result<(RunManifest, Model<f32>)> {
    let manifest = RunManifest::load(&run_dir.join("manifest.json"))?;
    let mut model = Model::<f32>::new(&manifest.config.model, manifest.config.seed)?;
    Checkpoint::load(&run_dir.join(format!("{which}.ckpt")))?.restore(&mut model, force)?;
    Ok((manifest, model))
}
