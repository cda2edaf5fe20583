//! Training engine for epoch-wise temporal resolution decrement (TRD).
//!
//! Randomly selected epochs train on images downsampled to a smaller
//! resolution, every other epoch trains at the native size. The crate holds
//! everything needed to run and audit such experiments on a CPU:
//!
//! - [`tensor`] and [`autograd`]: dense tensors and a reverse-mode tape for
//!   the small operator set a residual CNN needs.
//! - [`data`]: IDX / CIFAR parsing, resizing and augmentation.
//! - [`schedule`]: the per-epoch resolution plan and its ablation variants.
//! - [`model`]: resolution-agnostic classifiers, FLOPs accounting, CAM.
//! - [`train`]: the experiment engine, evaluation and run artifacts.

pub mod autograd;
pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use schedule::{Policy, Resolution, Schedule};
pub use tensor::{Scalar, Tensor};
