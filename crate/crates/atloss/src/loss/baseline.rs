//! Pointwise regression losses used as training baselines: MAE, MSE, Huber,
//! and Charbonnier. All reduce by mean over cells and report the gradient of
//! that mean with respect to the forecast.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same_shape, GridField};
use crate::loss::LossEval;

/// Default Huber transition point between quadratic and linear regimes.
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;
/// Default Charbonnier smoothing constant.
pub const DEFAULT_CHARBONNIER_EPSILON: f64 = 1e-3;

/// Which pointwise baseline to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineLossKind {
    Mae,
    Mse,
    /// Quadratic for |d| <= delta, linear beyond.
    Huber { delta: f64 },
    /// `sqrt(d^2 + eps^2)`: a smooth MAE, differentiable at d = 0.
    Charbonnier { epsilon: f64 },
}

impl BaselineLossKind {
    pub fn huber() -> Self {
        BaselineLossKind::Huber {
            delta: DEFAULT_HUBER_DELTA,
        }
    }

    pub fn charbonnier() -> Self {
        BaselineLossKind::Charbonnier {
            epsilon: DEFAULT_CHARBONNIER_EPSILON,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineLossKind::Mae => "mae",
            BaselineLossKind::Mse => "mse",
            BaselineLossKind::Huber { .. } => "huber",
            BaselineLossKind::Charbonnier { .. } => "charbonnier",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineLossKind::Huber { delta } if !delta.is_finite() || *delta <= 0.0 => Err(
                Error::invalid_param("delta", format!("must be finite and > 0, got {delta}")),
            ),
            BaselineLossKind::Charbonnier { epsilon }
                if !epsilon.is_finite() || *epsilon <= 0.0 =>
            {
                Err(Error::invalid_param(
                    "epsilon",
                    format!("must be finite and > 0, got {epsilon}"),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Per-cell value and derivative in the residual `d = y - x`.
    fn eval_cell(&self, d: f64) -> (f64, f64) {
        match *self {
            // subgradient 0 at the kink
            BaselineLossKind::Mae => (d.abs(), d.signum() * f64::from(d != 0.0)),
            BaselineLossKind::Mse => (d * d, 2.0 * d),
            BaselineLossKind::Huber { delta } => {
                if d.abs() <= delta {
                    (0.5 * d * d, d)
                } else {
                    (delta * (d.abs() - 0.5 * delta), delta * d.signum())
                }
            }
            BaselineLossKind::Charbonnier { epsilon } => {
                let r = (d * d + epsilon * epsilon).sqrt();
                (r, d / r)
            }
        }
    }
}

/// Mean-reduced baseline loss between truth `x_field` and forecast `y_field`.
pub fn baseline_loss(
    x_field: &GridField,
    y_field: &GridField,
    kind: BaselineLossKind,
) -> Result<LossEval> {
    kind.validate()?;
    check_same_shape(x_field, y_field)?;

    let n = x_field.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(x_field.len());
    for (x, y) in x_field.values().iter().zip(y_field.values()) {
        let (v, g) = kind.eval_cell(y - x);
        sum += v;
        grad.push(g / n);
    }
    Ok(LossEval {
        value: sum / n,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: &[f64]) -> GridField {
        GridField::new(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn identical_inputs_cost_nothing() {
        let x = field(&[0.0, 1.5, 3.0, -2.0]);
        for kind in [
            BaselineLossKind::Mae,
            BaselineLossKind::Mse,
            BaselineLossKind::huber(),
        ] {
            let eval = baseline_loss(&x, &x, kind).unwrap();
            assert_eq!(eval.value, 0.0, "{}", kind.name());
            assert!(eval.grad.iter().all(|g| *g == 0.0), "{}", kind.name());
        }
    }

    #[test]
    fn charbonnier_identical_inputs_cost_epsilon() {
        let x = field(&[0.0, 1.5, 3.0]);
        let eval = baseline_loss(&x, &x, BaselineLossKind::charbonnier()).unwrap();
        assert!((eval.value - DEFAULT_CHARBONNIER_EPSILON).abs() < 1e-15);
        assert!(eval.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn known_residual_values() {
        let x = field(&[0.0]);
        let y = field(&[2.0]);
        assert_eq!(
            baseline_loss(&x, &y, BaselineLossKind::Mae).unwrap().value,
            2.0
        );
        assert_eq!(
            baseline_loss(&x, &y, BaselineLossKind::Mse).unwrap().value,
            4.0
        );
        // |d| = 2 > delta = 1: delta * (|d| - delta / 2) = 1.5
        assert_eq!(
            baseline_loss(&x, &y, BaselineLossKind::huber())
                .unwrap()
                .value,
            1.5
        );
    }

    #[test]
    fn huber_quadratic_region_is_half_mse() {
        let x = field(&[1.0, 2.0, 3.0]);
        let y = field(&[1.5, 1.7, 3.2]); // all residuals within delta = 1
        let h = baseline_loss(&x, &y, BaselineLossKind::huber()).unwrap();
        let m = baseline_loss(&x, &y, BaselineLossKind::Mse).unwrap();
        assert!((h.value - 0.5 * m.value).abs() < 1e-15);
        for (hg, mg) in h.grad.iter().zip(&m.grad) {
            assert!((hg - 0.5 * mg).abs() < 1e-15);
        }
    }

    #[test]
    fn charbonnier_approaches_mae_as_epsilon_shrinks() {
        let x = field(&[0.0, 1.0, 5.0]);
        let y = field(&[2.0, 0.5, 4.0]);
        let mae = baseline_loss(&x, &y, BaselineLossKind::Mae).unwrap().value;
        let c = baseline_loss(&x, &y, BaselineLossKind::Charbonnier { epsilon: 1e-9 })
            .unwrap()
            .value;
        assert!((c - mae).abs() < 1e-8);
    }

    #[test]
    fn invalid_shape_parameters_are_rejected() {
        let x = field(&[1.0]);
        assert!(baseline_loss(&x, &x, BaselineLossKind::Huber { delta: 0.0 }).is_err());
        assert!(baseline_loss(&x, &x, BaselineLossKind::Charbonnier { epsilon: -1.0 }).is_err());
        let y = GridField::zeros(2, 2).unwrap();
        assert!(baseline_loss(&x, &y, BaselineLossKind::Mse).is_err());
    }

    fn fd_grad(
        x: &GridField,
        y: &GridField,
        kind: BaselineLossKind,
        cell: usize,
        h: f64,
    ) -> f64 {
        let mut up = y.values().to_vec();
        let mut dn = up.clone();
        up[cell] += h;
        dn[cell] -= h;
        let y_up = GridField::new(y.height(), y.width(), up).unwrap();
        let y_dn = GridField::new(y.height(), y.width(), dn).unwrap();
        let lu = baseline_loss(x, &y_up, kind).unwrap().value;
        let ld = baseline_loss(x, &y_dn, kind).unwrap().value;
        (lu - ld) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() * 6.0).collect();
        // keep residuals away from the MAE and Huber kinks
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x + (rng.gen::<f64>() - 0.5) * 4.0 + 0.3)
            .collect();
        let x = GridField::new(3, 4, xs).unwrap();
        let y = GridField::new(3, 4, ys).unwrap();
        for kind in [
            BaselineLossKind::Mae,
            BaselineLossKind::Mse,
            BaselineLossKind::Huber { delta: 0.8 },
            BaselineLossKind::charbonnier(),
        ] {
            let eval = baseline_loss(&x, &y, kind).unwrap();
            for cell in 0..12 {
                let fd = fd_grad(&x, &y, kind, cell, 1e-6);
                let denom = eval.grad[cell].abs().max(fd.abs()).max(1e-9);
                assert!(
                    (eval.grad[cell] - fd).abs() / denom < 1e-5,
                    "{} cell {cell}: {} vs {fd}",
                    kind.name(),
                    eval.grad[cell]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn values_are_non_negative_and_symmetric_under_swap(
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..8).map(|_| (rng.gen::<f64>() - 0.5) * 10.0).collect();
            let ys: Vec<f64> = (0..8).map(|_| (rng.gen::<f64>() - 0.5) * 10.0).collect();
            let x = GridField::new(2, 4, xs).unwrap();
            let y = GridField::new(2, 4, ys).unwrap();
            for kind in [
                BaselineLossKind::Mae,
                BaselineLossKind::Mse,
                BaselineLossKind::huber(),
                BaselineLossKind::charbonnier(),
            ] {
                let fwd = baseline_loss(&x, &y, kind).unwrap().value;
                let rev = baseline_loss(&y, &x, kind).unwrap().value;
                prop_assert!(fwd >= 0.0);
                prop_assert!((fwd - rev).abs() < 1e-12);
            }
        }

        #[test]
        fn mse_dominates_mae_squared_relation(
            d in -10.0f64..10.0,
        ) {
            // single cell: MSE = d^2, MAE = |d|
            let x = field(&[0.0]);
            let y = field(&[d]);
            let mse = baseline_loss(&x, &y, BaselineLossKind::Mse).unwrap().value;
            let mae = baseline_loss(&x, &y, BaselineLossKind::Mae).unwrap().value;
            prop_assert!((mse - mae * mae).abs() < 1e-12);
        }
    }
}
