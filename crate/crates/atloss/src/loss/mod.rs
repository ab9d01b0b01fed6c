//! Loss functions with analytic gradients.
//!
//! [`at`] holds the advanced torrential (AT) loss: a differentiable surrogate
//! for threshold-exceedance agreement, built by relaxing a per-cell binary
//! mismatch penalty with the binary Gumbel-Softmax. [`baseline`] holds the
//! pixel-wise losses it is compared against (MAE, MSE, Huber, Charbonnier).
//!
//! Every loss returns a [`LossEval`]: the scalar value under mean reduction
//! plus the per-cell gradient with respect to the forecast.

pub mod at;
pub mod baseline;

pub use at::{
    anneal_tau, at_loss, at_loss_grad_extremum, binary_penalty, overall_penalty, sample_logistic,
    soft_indicator, step_indicator, AnnealSchedule, AtLossParams, ScheduleShape,
};
pub use baseline::{baseline_loss, BaselineLossKind};

/// Scalar loss value plus the per-cell gradient `dL/dy_i` (mean reduction
/// already applied), in the forecast field's row-major cell order.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}
