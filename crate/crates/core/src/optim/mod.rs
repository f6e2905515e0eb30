//! Training: Adam, schedules, densification, and evaluation.

mod adam;
mod config;
mod train;

pub use adam::{adam_step, AdamMoments, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{DensifyConfig, LearningRates, Preset, TrainConfig};
pub use train::{
    densify_and_prune, evaluate, scene_extent, view_for_iteration, Detached, DensifyStats, EvalReport, TrainState,
    TrainView, Trainer, ViewLoss, ViewMetrics,
};
