//! Resolution-agnostic classifiers, FLOPs accounting, CAM and checkpoints.

pub mod cam;
pub mod checkpoint;
pub mod config;
pub mod flops;
pub mod network;

pub use cam::cam;
pub use checkpoint::{config_hash, Checkpoint};
pub use config::{zoo, zoo_model, BlockKind, ModelConfig, StageConfig, ZooEntry};
pub use flops::{flops_at_resolution, flops_report, layer_trace, mflops, mflops_closed_form, FlopsReport};
pub use network::{ForwardVars, Model};
