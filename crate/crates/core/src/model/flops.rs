//! FLOPs accounting.
//!
//! A FLOP here is one multiply-accumulate. A convolution costs
//! `Kh*Kw*Cin*Cout*Hout*Wout`, a linear layer `F*K`; batch norm, ReLU,
//! additions and pooling count as zero. Figures are forward-pass costs for a
//! single image; [`TRAIN_FORWARD_MULTIPLIER`] converts to forward plus
//! backward. Resize cost is not part of mFLOPs and is reported on its own.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::data::ResizeMode;
use crate::error::{Error, Result};
use crate::schedule::{Resolution, Schedule};

/// Forward plus backward is taken as three forward passes.
pub const TRAIN_FORWARD_MULTIPLIER: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub name: String,
    pub kind: String,
    pub macs: u64,
    /// `[C, H, W]` of the output (or `[K]` for the classifier).
    pub output: Vec<usize>,
}

fn conv_out(x: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (x + 2 * padding - kernel) / stride + 1
}

/// Per-layer forward MACs for one image at resolution `r`.
pub fn layer_trace(config: &ModelConfig, r: Resolution) -> Result<Vec<LayerFlops>> {
    config.validate()?;
    config.check_resolution(r)?;
    let mut out = Vec::new();
    let mut conv = |name: String, cin: usize, cout: usize, k: usize, s: usize, (h, w): (usize, usize)| {
        let (ho, wo) = (conv_out(h, k, s, k / 2), conv_out(w, k, s, k / 2));
        out.push(LayerFlops {
            name,
            kind: "conv2d".into(),
            macs: (k * k * cin * cout * ho * wo) as u64,
            output: vec![cout, ho, wo],
        });
        (ho, wo)
    };
    let mut hw = conv("stem.conv".into(), config.in_channels, config.stem_channels, 3, 1, (r.height, r.width));
    let mut cin = config.stem_channels;
    for (si, stage) in config.stages.iter().enumerate() {
        for bi in 0..stage.blocks {
            let stride = if bi == 0 { stage.stride } else { 1 };
            let name = format!("stage{}.block{bi}", si + 1);
            let cout = stage.channels;
            let mid = conv(format!("{name}.conv1"), cin, cout, 3, stride, hw);
            let next = conv(format!("{name}.conv2"), cout, cout, 3, 1, mid);
            if config.block_kind == super::BlockKind::Residual && (stride != 1 || cin != cout) {
                conv(format!("{name}.shortcut"), cin, cout, 1, stride, hw);
            }
            hw = next;
            cin = cout;
        }
    }
    let features = cin * config.pool_output.area();
    out.push(LayerFlops {
        name: "fc".into(),
        kind: "linear".into(),
        macs: (features * config.class_count) as u64,
        output: vec![config.class_count],
    });
    Ok(out)
}

/// Total forward MACs for one image at `r`.
pub fn flops_at_resolution(config: &ModelConfig, r: Resolution) -> Result<u64> {
    Ok(layer_trace(config, r)?.iter().map(|l| l.macs).sum())
}

/// Time-domain mean of `flops_fn` over the schedule's epochs. For the
/// per-image policy each epoch contributes its expected mixture.
pub fn mflops(schedule: &Schedule, mut flops_fn: impl FnMut(Resolution) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..schedule.total_epochs {
        for (r, weight) in schedule.epoch_mixture(e)? {
            if weight > 0.0 {
                total += weight * flops_fn(r)?;
            }
        }
    }
    Ok(total / schedule.total_epochs as f64)
}

/// `F_base * ((1 - P) + P * (lambda / R)^2)`, for architectures known only
/// through their baseline cost.
pub fn mflops_closed_form(f_base: f64, original: f64, reduced: f64, p: f64) -> Result<f64> {
    if !(original > 0.0 && reduced > 0.0 && reduced <= original) {
        return Err(Error::invalid(format!("need 0 < lambda <= R, got lambda={reduced}, R={original}")));
    }
    if !(0.0..=1.0).contains(&p) || !(f_base >= 0.0) {
        return Err(Error::invalid(format!("need P in [0, 1] and F_base >= 0, got P={p}, F_base={f_base}")));
    }
    let ratio = reduced / original;
    Ok(f_base * ((1.0 - p) + p * ratio * ratio))
}

/// Interpolation MACs to produce one `channels x r` image
/// (four taps per bilinear output pixel, none for nearest).
pub fn resize_macs(channels: usize, r: Resolution, mode: ResizeMode) -> u64 {
    match mode {
        ResizeMode::Nearest => 0,
        ResizeMode::Bilinear => 4 * (channels * r.area()) as u64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionFlops {
    pub resolution: Resolution,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub convention: String,
    /// Per-layer MACs at the original resolution.
    pub per_layer: Vec<LayerFlops>,
    /// Ascending by resolution.
    pub total_at: Vec<ResolutionFlops>,
    pub mflops: f64,
    pub savings_fraction: f64,
    /// Per-image interpolation cost at the reduced size, excluded from mFLOPs.
    pub resize_macs_per_image: u64,
}

impl FlopsReport {
    pub fn total_at(&self, r: Resolution) -> Option<u64> {
        self.total_at.iter().find(|t| t.resolution == r).map(|t| t.flops)
    }

    /// Plain-text table in M units.
    pub fn to_table(&self) -> String {
        let mut s = format!("# {}\n", self.convention);
        s += &format!("{:<32} {:>14}\n", "layer", "MFLOPs");
        for l in &self.per_layer {
            s += &format!("{:<32} {:>14.2}\n", l.name, l.macs as f64 / 1e6);
        }
        for t in &self.total_at {
            s += &format!("{:<32} {:>14.2}\n", format!("total @ {}", t.resolution), t.flops as f64 / 1e6);
        }
        s += &format!("{:<32} {:>14.2}\n", "mFLOPs", self.mflops / 1e6);
        s += &format!("{:<32} {:>13.2}%\n", "savings", 100.0 * self.savings_fraction);
        s
    }
}

pub fn flops_report(config: &ModelConfig, schedule: &Schedule, resize_mode: ResizeMode) -> Result<FlopsReport> {
    let original = schedule.original_resolution;
    let mut resolutions: Vec<Resolution> = schedule.per_epoch_resolution.clone();
    resolutions.push(original);
    resolutions.push(schedule.reduced_resolution);
    resolutions.sort();
    resolutions.dedup();
    let total_at = resolutions
        .iter()
        .map(|&r| Ok(ResolutionFlops { resolution: r, flops: flops_at_resolution(config, r)? }))
        .collect::<Result<Vec<_>>>()?;
    let base = flops_at_resolution(config, original)? as f64;
    let m = mflops(schedule, |r| Ok(flops_at_resolution(config, r)? as f64))?;
    Ok(FlopsReport {
        convention: "FLOPs = multiply-accumulates of one forward pass per image; BN/ReLU/add/pool excluded".into(),
        per_layer: layer_trace(config, original)?,
        total_at,
        mflops: m,
        savings_fraction: 1.0 - m / base,
        resize_macs_per_image: resize_macs(config.in_channels, schedule.reduced_resolution, resize_mode),
    })
}
