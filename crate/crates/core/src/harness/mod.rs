//! Experiment orchestration: wires augmentation, the two networks and the
//! distillation losses into the training loop, with metrics persistence,
//! evaluation, CAM heatmap emission and parameter checkpoints.

mod config;
mod metrics;
mod train;

pub use config::{ExperimentConfig, Seeds, TrainMode};
pub use metrics::{MetricsRecord, Summary};
pub use train::{
    emit_cam, evaluate, run_experiment, sweep, train_step, NetState, SweepOutcome,
};
