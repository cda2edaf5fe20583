//! Architecture description and the model zoo.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::Resolution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Plain,
    #[default]
    Residual,
}

/// `blocks` blocks of width `channels`; the first one applies `stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub stride: usize,
}

/// A 3x3 stem convolution, then stages of two-convolution blocks, then
/// adaptive average pooling and one linear classifier.
///
/// A residual block adds its input back before the final ReLU; when the
/// stride or width changes the shortcut is a strided 1x1 convolution with
/// batch norm. Convolutions carry no bias because batch norm follows each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub block_kind: BlockKind,
    pub class_count: usize,
    #[serde(default = "unit_pool")]
    pub pool_output: Resolution,
}

fn unit_pool() -> Resolution {
    Resolution::square(1)
}

impl ModelConfig {
    /// Cumulative downsampling factor. Smaller inputs are rejected.
    pub fn min_input_resolution(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    pub fn final_channels(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.channels)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.in_channels", self.in_channels),
            ("model.stem_channels", self.stem_channels),
            ("model.class_count", self.class_count),
            ("model.pool_output", self.pool_output.height.min(self.pool_output.width)),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 || s.stride == 0 {
                return Err(Error::config(format!("model.stages[{i}]"), "blocks, channels and stride must be positive"));
            }
        }
        Ok(())
    }

    /// Check that `r` is large enough for this network.
    pub fn check_resolution(&self, r: Resolution) -> Result<()> {
        let min = self.min_input_resolution();
        if r.height < min || r.width < min {
            return Err(Error::ResolutionBelowMinimum {
                height: r.height,
                width: r.width,
                minimum: min,
            });
        }
        let (fh, fw) = self.feature_size(r);
        if fh < self.pool_output.height || fw < self.pool_output.width {
            return Err(Error::ResolutionBelowMinimum {
                height: r.height,
                width: r.width,
                minimum: min * self.pool_output.height.max(self.pool_output.width),
            });
        }
        Ok(())
    }

    /// Spatial size of the last feature map for input `r`.
    pub fn feature_size(&self, r: Resolution) -> (usize, usize) {
        // 3x3 / pad 1 and 1x1 / pad 0 both give floor((x - 1) / s) + 1.
        self.stages.iter().fold((r.height, r.width), |(h, w), s| {
            ((h - 1) / s.stride + 1, (w - 1) / s.stride + 1)
        })
    }
}

/// A named zoo architecture with the input size it is meant for.
#[derive(Clone, Debug)]
pub struct ZooEntry {
    pub name: &'static str,
    pub config: ModelConfig,
    pub native: Resolution,
}

fn stages(spec: &[(usize, usize, usize)]) -> Vec<StageConfig> {
    spec.iter()
        .map(|&(blocks, channels, stride)| StageConfig { blocks, channels, stride })
        .collect()
}

fn entry(name: &'static str, in_channels: usize, side: usize, spec: &[(usize, usize, usize)], kind: BlockKind) -> ZooEntry {
    ZooEntry {
        name,
        config: ModelConfig {
            in_channels,
            stem_channels: spec[0].1,
            stages: stages(spec),
            block_kind: kind,
            class_count: 10,
            pool_output: unit_pool(),
        },
        native: Resolution::square(side),
    }
}

/// Small classifiers sized for CPU experiments.
pub fn zoo() -> Vec<ZooEntry> {
    vec![
        entry("resnet10-desk", 1, 28, &[(2, 8, 1), (2, 16, 2)], BlockKind::Residual),
        entry("resnet-desk", 1, 28, &[(1, 16, 1), (1, 32, 2), (1, 64, 2)], BlockKind::Residual),
        entry("resnet-desk-narrow", 1, 28, &[(1, 8, 1), (1, 16, 2), (1, 32, 2)], BlockKind::Residual),
        entry("plain-desk", 1, 28, &[(1, 16, 1), (1, 32, 2), (1, 64, 2)], BlockKind::Plain),
        entry("resnet-desk-rgb", 3, 32, &[(1, 16, 1), (1, 32, 2), (1, 64, 2)], BlockKind::Residual),
        entry("resnet14-rgb", 3, 32, &[(2, 16, 1), (2, 32, 2), (2, 64, 2)], BlockKind::Residual),
    ]
}

pub fn zoo_model(name: &str) -> Result<ZooEntry> {
    zoo().into_iter().find(|e| e.name == name).ok_or_else(|| {
        let names: Vec<_> = zoo().iter().map(|e| e.name).collect();
        Error::invalid(format!("unknown model `{name}`; known: {}", names.join(", ")))
    })
}
