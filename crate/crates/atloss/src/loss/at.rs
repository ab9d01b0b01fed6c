//! The advanced torrential (AT) loss and its building blocks.
//!
//! The chain of definitions, all per grid cell `i` with threshold `theta`:
//!
//! ```text
//! f(k)      = 1 if k >= theta else 0                 (step indicator)
//! P_i       = f(x_i) + f(y_i) - 2 f(x_i) f(y_i)      (binary mismatch penalty, XOR)
//! P         = sum_i (f(x_i) - f(y_i))^2               (overall penalty, the QUBO objective)
//! zeta_i    = sigmoid((2 y_i - 2 theta + z_i) / tau)  (binary Gumbel-Softmax relaxation of f(y_i))
//! L         = (1/n) sum_i (f(x_i) - zeta_i)^2         (AT loss)
//! dL_i/dy_i = -(4/tau) (f(x_i) - zeta_i) zeta_i (1 - zeta_i)
//! ```
//!
//! `z_i ~ Logistic(0, 1)` comes from inverse transform sampling
//! (`ln u - ln(1 - u)`, `u ~ Uniform(0, 1)`), is scaled by a small
//! perturbation factor, and hard-clamped so the perturbation magnitude stays
//! well below 1. The temperature `tau` in `(0, 1]` is annealed toward a floor
//! across training epochs; small `tau` sharpens `zeta` toward the hard
//! indicator, so the loss approaches `P / n`.
//!
//! The per-cell gradient magnitude is bounded by `16 / (27 tau)`, attained at
//! `zeta = 2/3` when `f(x_i) = 0` and `zeta = 1/3` when `f(x_i) = 1`. For
//! `tau in [0.6, 1]` the bound stays below 1, which keeps early training
//! stable; the exposed extremum lets callers check that bound directly.
//!
//! The loss already applies a sigmoid, so the forecast `y` must be the
//! model's pre-activation output: any extra output squashing would stack two
//! nonlinearities and lose information.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{check_same_shape, GridField};
use crate::loss::LossEval;

/// Default exceedance threshold (mm/h) for loss and verification metrics.
pub const DEFAULT_THRESHOLD: f64 = 2.0;
/// Default floor for the annealed temperature.
pub const DEFAULT_TAU_FLOOR: f64 = 0.05;
/// Default multiplier on the logistic perturbation `z`. The logistic 99th
/// percentile is ln(99) ~ 4.595, so 0.1 keeps 99% of scaled draws below 0.46.
pub const DEFAULT_PERTURBATION_SCALE: f64 = 0.1;
/// Hard clamp applied to the scaled perturbation, enforcing |z| << 1 without
/// distorting the logistic shape near zero.
pub const PERTURBATION_CLAMP: f64 = 0.5;

/// Hyperparameters of the AT loss.
///
/// `tau` must lie in `(0, 1]`. The annealing floor is enforced by
/// [`AnnealSchedule`], not here: diagnostic uses (saturation checks, the
/// penalty-limit property) legitimately evaluate the loss below the training
/// floor.
#[derive(Debug, Clone, PartialEq)]
pub struct AtLossParams {
    /// Temperature of the relaxation, in `(0, 1]`.
    pub tau: f64,
    /// Exceedance threshold in the forecast's units (mm/h at physical scale).
    pub theta: f64,
    /// Multiplier on the logistic draw; the scaled draw is clamped to
    /// `[-PERTURBATION_CLAMP, PERTURBATION_CLAMP]`.
    pub perturbation_scale: f64,
    /// When true, `z = 0` everywhere. Used for gradient checks and tests.
    pub deterministic: bool,
    /// When true, one `z` is drawn per forward pass and shared by all cells
    /// instead of the default independent per-cell draws.
    pub shared_noise: bool,
    /// Seed for the perturbation stream; a fixed seed makes the loss
    /// bit-reproducible.
    pub seed: u64,
}

impl AtLossParams {
    /// Stochastic-perturbation parameters with the default scale and seed 0.
    pub fn new(tau: f64, theta: f64) -> Result<Self> {
        let params = AtLossParams {
            tau,
            theta,
            perturbation_scale: DEFAULT_PERTURBATION_SCALE,
            deterministic: false,
            shared_noise: false,
            seed: 0,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with `z = 0`, for gradient checks and saturation tests.
    pub fn deterministic(tau: f64, theta: f64) -> Result<Self> {
        let params = AtLossParams {
            deterministic: true,
            ..Self::new(tau, theta)?
        };
        Ok(params)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scale(mut self, perturbation_scale: f64) -> Result<Self> {
        self.perturbation_scale = perturbation_scale;
        self.validate()?;
        Ok(self)
    }

    /// Same parameters at a different temperature (used by the annealer).
    pub fn at_tau(&self, tau: f64) -> Result<Self> {
        let params = AtLossParams {
            tau,
            ..self.clone()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau > 1.0 {
            return Err(Error::invalid_param(
                "tau",
                format!("must be in (0, 1], got {}", self.tau),
            ));
        }
        if !self.theta.is_finite() || self.theta < 0.0 {
            return Err(Error::invalid_param(
                "theta",
                format!("must be finite and >= 0, got {}", self.theta),
            ));
        }
        if !self.perturbation_scale.is_finite() || self.perturbation_scale < 0.0 {
            return Err(Error::invalid_param(
                "perturbation_scale",
                format!("must be finite and >= 0, got {}", self.perturbation_scale),
            ));
        }
        Ok(())
    }
}

/// Decay law for the annealed temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleShape {
    Linear,
    Exponential,
}

/// Temperature annealing across training epochs: monotone non-increasing from
/// `tau_start` down to `tau_floor`, reached at `total_epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    pub tau_start: f64,
    pub tau_floor: f64,
    pub total_epochs: usize,
    pub shape: ScheduleShape,
}

impl AnnealSchedule {
    pub fn new(
        tau_start: f64,
        tau_floor: f64,
        total_epochs: usize,
        shape: ScheduleShape,
    ) -> Result<Self> {
        if !tau_start.is_finite() || tau_start <= 0.0 || tau_start > 1.0 {
            return Err(Error::invalid_param(
                "tau_start",
                format!("must be in (0, 1], got {tau_start}"),
            ));
        }
        if !tau_floor.is_finite() || tau_floor <= 0.0 || tau_floor > tau_start {
            return Err(Error::invalid_param(
                "tau_floor",
                format!("must be in (0, tau_start], got {tau_floor}"),
            ));
        }
        if total_epochs == 0 {
            return Err(Error::invalid_param("total_epochs", "must be positive"));
        }
        Ok(AnnealSchedule {
            tau_start,
            tau_floor,
            total_epochs,
            shape,
        })
    }

    /// Linear decay from 1.0 to the default floor over `total_epochs`.
    pub fn default_linear(total_epochs: usize) -> Result<Self> {
        Self::new(1.0, DEFAULT_TAU_FLOOR, total_epochs, ScheduleShape::Linear)
    }

    /// Temperature at `epoch`, clamped to `[tau_floor, tau_start]`. The
    /// endpoints return the configured values exactly.
    pub fn tau(&self, epoch: usize) -> f64 {
        if epoch == 0 {
            return self.tau_start;
        }
        if epoch >= self.total_epochs {
            return self.tau_floor;
        }
        let progress = epoch as f64 / self.total_epochs as f64;
        let tau = match self.shape {
            ScheduleShape::Linear => {
                self.tau_floor + (self.tau_start - self.tau_floor) * (1.0 - progress)
            }
            ScheduleShape::Exponential => {
                self.tau_start * (self.tau_floor / self.tau_start).powf(progress)
            }
        };
        tau.clamp(self.tau_floor, self.tau_start)
    }
}

/// Temperature for `epoch` under `schedule`.
pub fn anneal_tau(schedule: &AnnealSchedule, epoch: usize) -> f64 {
    schedule.tau(epoch)
}

/// Numerically stable logistic sigmoid.
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_finite(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, value })
    }
}

/// Hard exceedance indicator: 1 iff `k >= theta` (the boundary `k = theta`
/// counts as exceedance), else 0.
pub fn step_indicator(k: f64, theta: f64) -> Result<u8> {
    check_finite("intensity", k)?;
    check_finite("threshold", theta)?;
    Ok(indicator(k, theta) as u8)
}

/// Unchecked indicator for values already validated finite.
#[inline]
pub(crate) fn indicator(k: f64, theta: f64) -> bool {
    k >= theta
}

/// Per-cell binary mismatch penalty `f(x) + f(y) - 2 f(x) f(y)`: the XOR of
/// the two indicators, so exactly the false-forecast cases cost 1.
pub fn binary_penalty(x: f64, y: f64, theta: f64) -> Result<u8> {
    let fx = step_indicator(x, theta)?;
    let fy = step_indicator(y, theta)?;
    Ok(fx + fy - 2 * fx * fy)
}

/// Overall penalty `sum_i (f(x_i) - f(y_i))^2`: the number of cells whose
/// indicators disagree. Minimizing it over the binary forecast indicators is
/// a quadratic unconstrained binary optimization (QUBO) with minimum 0 at the
/// observed pattern.
pub fn overall_penalty(x_field: &GridField, y_field: &GridField, theta: f64) -> Result<u64> {
    check_same_shape(x_field, y_field)?;
    check_finite("threshold", theta)?;
    let count = x_field
        .values()
        .iter()
        .zip(y_field.values())
        .filter(|(x, y)| indicator(**x, theta) != indicator(**y, theta))
        .count();
    Ok(count as u64)
}

/// Logistic(0, 1) draw by inverse transform sampling: `ln u - ln(1 - u)` with
/// `u ~ Uniform(0, 1)` kept away from the endpoints by a machine-epsilon
/// guard.
pub fn sample_logistic<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    logistic_from_uniform(rng.gen::<f64>())
}

/// The inverse logistic CDF applied to `u`, clamped away from {0, 1}.
pub fn logistic_from_uniform(u: f64) -> f64 {
    let u = u.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    u.ln() - (1.0 - u).ln()
}

/// Relaxed indicator `zeta = sigmoid((2 y - 2 theta + z) / tau)`: strictly
/// increasing in `y`, approaching the hard step as `tau -> 0`.
pub fn soft_indicator(y: f64, params: &AtLossParams, z: f64) -> Result<f64> {
    params.validate()?;
    check_finite("forecast value", y)?;
    check_finite("perturbation", z)?;
    Ok(sigmoid((2.0 * y - 2.0 * params.theta + z) / params.tau))
}

/// Per-cell gradient `-(4/tau)(fx - zeta) zeta (1 - zeta)` before mean
/// reduction.
#[inline]
fn cell_grad(fx: f64, zeta: f64, tau: f64) -> f64 {
    -(4.0 / tau) * (fx - zeta) * zeta * (1.0 - zeta)
}

/// The AT loss between ground truth `x_field` and forecast `y_field`, with
/// its analytic gradient.
///
/// `y_field` must carry pre-activation values: the loss applies its own
/// sigmoid. The value is `(1/n) sum_i (f(x_i) - zeta_i)^2`, always in
/// `[0, 1]`; the gradient is the closed per-cell form divided by `n`, using
/// the same perturbation draws as the forward value. In deterministic mode
/// `z = 0`; otherwise `z` is drawn per cell (or once, with `shared_noise`)
/// from a seeded stream, scaled, and clamped.
pub fn at_loss(x_field: &GridField, y_field: &GridField, params: &AtLossParams) -> Result<LossEval> {
    params.validate()?;
    check_same_shape(x_field, y_field)?;

    let n = x_field.len() as f64;
    let inv_tau = 1.0 / params.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let shared_z = if !params.deterministic && params.shared_noise {
        scaled_draw(&mut rng, params.perturbation_scale)
    } else {
        0.0
    };

    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(x_field.len());
    for (x, y) in x_field.values().iter().zip(y_field.values()) {
        let z = if params.deterministic {
            0.0
        } else if params.shared_noise {
            shared_z
        } else {
            scaled_draw(&mut rng, params.perturbation_scale)
        };
        let fx = indicator(*x, params.theta) as u8 as f64;
        let zeta = sigmoid((2.0 * y - 2.0 * params.theta + z) * inv_tau);
        let diff = fx - zeta;
        sum += diff * diff;
        grad.push(cell_grad(fx, zeta, params.tau) / n);
    }

    Ok(LossEval {
        value: sum / n,
        grad,
    })
}

fn scaled_draw<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    (sample_logistic(rng) * scale).clamp(-PERTURBATION_CLAMP, PERTURBATION_CLAMP)
}

/// Location and magnitude of the per-cell gradient extremum.
///
/// Returns `(zeta_star, magnitude)` where `zeta_star = 2/3` when the observed
/// indicator is 0 and `1/3` when it is 1; the magnitude is `16 / (27 tau)` in
/// both cases (about `0.5926 / tau`). This is the Lipschitz constant of the
/// per-cell loss in the forecast value.
pub fn at_loss_grad_extremum(tau: f64, x_indicator: bool) -> Result<(f64, f64)> {
    if !tau.is_finite() || tau <= 0.0 || tau > 1.0 {
        return Err(Error::invalid_param(
            "tau",
            format!("must be in (0, 1], got {tau}"),
        ));
    }
    let zeta_star = if x_indicator { 1.0 / 3.0 } else { 2.0 / 3.0 };
    Ok((zeta_star, 16.0 / (27.0 * tau)))
}
