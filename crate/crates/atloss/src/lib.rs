//! Precipitation-nowcasting loss laboratory: the advanced torrential (AT)
//! loss with analytic gradients, pointwise baselines, categorical
//! verification metrics, a synthetic radar data pipeline, and a small
//! deterministic CNN trainer for loss-consistency experiments.

pub mod data;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod loss;
pub mod metrics;
mod seedmix;
pub mod train;
pub mod verification;

pub use error::{Error, Result};
pub use grid::GridField;
pub use loss::{
    anneal_tau, at_loss, at_loss_grad_extremum, baseline_loss, binary_penalty, overall_penalty,
    sample_logistic, soft_indicator, step_indicator, AnnealSchedule, AtLossParams,
    BaselineLossKind, LossEval, ScheduleShape,
};
