//! Optimizers, the four training schedules, toy data and metrics.

mod config;
mod data;
pub mod dirac;
mod gan;
mod optim;
mod run;

pub use config::{Mode, Schedule, TrainConfig};
pub use data::{mode_coverage, sample_ring_gaussians, Coverage, RingSpec};
pub use gan::{Batches, Gan, RingBatches, StepGrads, StepStats};
pub use optim::{adam_step, sgd_step, AdamMoments, OptimizerConfig, OptimizerState};
pub use run::{
    run_training, write_metrics_csv, FailureRecord, MetricsRow, RunSummary, StepStatsRecord,
    METRICS_HEADER,
};
