//! Adam optimizer with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid_param("learning_rate", "must be > 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !b.is_finite() || !(0.0..1.0).contains(&b) {
                return Err(Error::invalid_param(name, format!("must be in [0, 1), got {b}")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::invalid_param("epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// Moment accumulators for a fixed flat parameter count, updated across a
/// caller-supplied list of (parameter, gradient) slice pairs whose combined
/// length must always equal that count.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Result<Self> {
        config.validate()?;
        if param_count == 0 {
            return Err(Error::invalid_param("param_count", "must be positive"));
        }
        Ok(AdamState {
            config,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the model's parameter tensors, visited in a fixed
    /// order. `params[i]` and `grads[i]` must have equal lengths.
    pub fn step<const K: usize>(
        &mut self,
        mut params: [&mut [f64]; K],
        grads: [&[f64]; K],
    ) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.m.len() {
            return Err(Error::TensorShape {
                expected: format!("{} parameters", self.m.len()),
                got: format!("{total} parameters"),
            });
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);

        let mut at = 0;
        for (p_slice, g_slice) in params.iter_mut().zip(grads.iter()) {
            if p_slice.len() != g_slice.len() {
                return Err(Error::TensorShape {
                    expected: format!("{} gradients", p_slice.len()),
                    got: format!("{} gradients", g_slice.len()),
                });
            }
            for (p, g) in p_slice.iter_mut().zip(g_slice.iter()) {
                let m = &mut self.m[at];
                let v = &mut self.v[at];
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                at += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut state = AdamState::new(AdamConfig::default(), 4).unwrap();
        let mut params = vec![1.0, -2.0, 0.5, 3.0];
        let snapshot = params.clone();
        let zeros = vec![0.0; 4];
        for _ in 0..5 {
            state.step([&mut params[..]], [&zeros[..]]).unwrap();
        }
        assert_eq!(params, snapshot);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction, step 1 moves by ~lr * sign(g)
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, 2).unwrap();
        let mut params = vec![0.0, 0.0];
        let grads = vec![3.0, -0.25];
        state.step([&mut params[..]], [&grads[..]]).unwrap();
        assert!((params[0] + 0.1).abs() < 1e-6, "{}", params[0]);
        assert!((params[1] - 0.1).abs() < 1e-6, "{}", params[1]);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, 1).unwrap();
        let mut params = vec![5.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (params[0] - 1.5)];
            state.step([&mut params[..]], [&g[..]]).unwrap();
        }
        assert!((params[0] - 1.5).abs() < 1e-2, "{}", params[0]);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), 3).unwrap();
        let mut params = vec![0.0; 4];
        let grads = vec![0.0; 4];
        assert!(state.step([&mut params[..]], [&grads[..]]).is_err());

        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(bad, 3).is_err());
    }

    #[test]
    fn multi_slice_updates_are_flat_consistent() {
        // one state over two tensors equals one state over the concatenation
        let cfg = AdamConfig::default();
        let mut split_state = AdamState::new(cfg, 5).unwrap();
        let mut a = vec![1.0, 2.0];
        let mut b = vec![3.0, 4.0, 5.0];
        let ga = vec![0.1, -0.2];
        let gb = vec![0.3, 0.0, -0.4];
        split_state.step([&mut a[..], &mut b[..]], [&ga[..], &gb[..]]).unwrap();

        let mut flat_state = AdamState::new(cfg, 5).unwrap();
        let mut flat = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let gflat = vec![0.1, -0.2, 0.3, 0.0, -0.4];
        flat_state.step([&mut flat[..]], [&gflat[..]]).unwrap();

        let joined: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        assert_eq!(joined, flat);
    }
}
