//! Experiment engine: configuration, the training loop, evaluation and run
//! artifacts.

pub mod config;
pub mod engine;
pub mod eval;
pub mod records;
pub mod sweep;

pub use config::{apply_override, ExperimentConfig, Precision};
pub use engine::{load_datasets, load_run_model, train, train_on, TrainOptions, TrainOutcome};
pub use eval::{evaluate, export_cam_gallery, prepare, stress_test, Normalization, StressReport};
pub use records::{measured_training_flops, read_metrics, savings_fraction, EpochRecord, RunManifest};
