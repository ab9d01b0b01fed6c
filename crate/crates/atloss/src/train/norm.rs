//! Instance normalization (per sample, per channel) with learnable affine
//! parameters, and the Swish activation `x * sigmoid(x)`.

use crate::error::{Error, Result};
use crate::train::fastmath;
use crate::train::tensor::Tensor4;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Values the normalization backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    /// Standardized activations before the affine map.
    x_hat: Tensor4,
    /// `1 / sqrt(var + eps)` per (sample, channel).
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNorm2d {
    channels: usize,
    eps: f64,
    /// Learnable scale, one per channel.
    pub(crate) gamma: Vec<f64>,
    /// Learnable shift, one per channel.
    pub(crate) beta: Vec<f64>,
}

impl InstanceNorm2d {
    pub fn new(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid_param("channels", "must be positive"));
        }
        Ok(InstanceNorm2d {
            channels,
            eps: INSTANCE_NORM_EPS,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Standardize each (sample, channel) plane to mean 0, biased variance 1,
    /// then apply the per-channel affine map.
    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, NormCache)> {
        if x.channels() != self.channels {
            return Err(Error::TensorShape {
                expected: format!("{} channels", self.channels),
                got: format!("{} channels", x.channels()),
            });
        }
        let (n, c, h, w) = x.shape();
        let m = (h * w) as f64;
        let mut x_hat = Tensor4::zeros(n, c, h, w)?;
        let mut out = Tensor4::zeros(n, c, h, w)?;
        let mut inv_std = Vec::with_capacity(n * c);

        for b in 0..n {
            for ch in 0..c {
                let plane = x.plane(b, ch);
                let mean = fastmath::sum(plane) / m;
                let var = fastmath::sum_sq_dev(plane, mean) / m;
                let is = 1.0 / (var + self.eps).sqrt();
                inv_std.push(is);
                let (g, be) = (self.gamma[ch], self.beta[ch]);
                let xh = x_hat.plane_mut(b, ch);
                let o = out.plane_mut(b, ch);
                for ((dst_h, dst_o), v) in xh.iter_mut().zip(o.iter_mut()).zip(plane) {
                    let vh = (v - mean) * is;
                    *dst_h = vh;
                    *dst_o = g * vh + be;
                }
            }
        }
        Ok((out, NormCache { x_hat, inv_std }))
    }

    /// Input gradient plus per-channel gamma/beta gradients.
    pub fn backward(
        &self,
        grad_out: &Tensor4,
        cache: &NormCache,
    ) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
        if !grad_out.same_shape(&cache.x_hat) {
            return Err(Error::TensorShape {
                expected: format!("{:?}", cache.x_hat.shape()),
                got: format!("{:?}", grad_out.shape()),
            });
        }
        let (n, c, h, w) = grad_out.shape();
        let m = (h * w) as f64;
        let mut grad_in = Tensor4::zeros(n, c, h, w)?;
        let mut grad_gamma = vec![0.0; c];
        let mut grad_beta = vec![0.0; c];

        for b in 0..n {
            for ch in 0..c {
                let g = grad_out.plane(b, ch);
                let xh = cache.x_hat.plane(b, ch);
                let is = cache.inv_std[b * c + ch];
                let gamma = self.gamma[ch];

                let sum_g = fastmath::sum(g);
                let sum_gx = fastmath::dot(g, xh);
                grad_beta[ch] += sum_g;
                grad_gamma[ch] += sum_gx;

                // d x_hat_i = gamma * g_i; standard instance/batch-norm form
                let scale = gamma * is / m;
                let gi = grad_in.plane_mut(b, ch);
                for ((dst, gv), xv) in gi.iter_mut().zip(g).zip(xh) {
                    *dst = scale * (m * gv - sum_g - xv * sum_gx);
                }
            }
        }
        Ok((grad_in, grad_gamma, grad_beta))
    }
}

/// Swish forward: `y = x * sigmoid(x)`. Also returns the sigmoid tensor so
/// the backward pass needs no transcendental calls.
pub fn swish_forward(x: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    let mut out = x.clone();
    let mut sig = x.clone();
    for (s, y) in sig.data_mut().iter_mut().zip(out.data_mut()) {
        let sv = fastmath::sigmoid(*s);
        *y *= sv;
        *s = sv;
    }
    Ok((out, sig))
}

/// Swish input gradient: `dy/dx = sigma(x) * (1 + x * (1 - sigma(x)))`,
/// which is 0.5 at x = 0. `sigma` is the cached tensor from
/// [`swish_forward`].
pub fn swish_backward(x: &Tensor4, sigma: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    if !x.same_shape(grad_out) || !x.same_shape(sigma) {
        return Err(Error::TensorShape {
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let mut grad_in = grad_out.clone();
    let gd = grad_in.data_mut();
    for i in 0..gd.len() {
        let s = sigma.data()[i];
        let v = x.data()[i];
        gd[i] *= s * (1.0 + v * (1.0 - s));
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * c * h * w)
            .map(|_| rng.gen::<f64>() * 4.0 - 2.0)
            .collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn standardizes_each_plane() {
        let norm = InstanceNorm2d::new(3).unwrap();
        let x = random_tensor(2, 3, 6, 5, 1);
        let (y, cache) = norm.forward(&x).unwrap();
        let m = 30.0;
        for b in 0..2 {
            for c in 0..3 {
                let plane = cache.x_hat.plane(b, c);
                let mean = plane.iter().sum::<f64>() / m;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                assert!(mean.abs() < 1e-12, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "var {var}");
                // default affine is identity
                assert_eq!(y.plane(b, c), plane);
            }
        }
    }

    #[test]
    fn affine_parameters_apply_per_channel() {
        let mut norm = InstanceNorm2d::new(2).unwrap();
        norm.gamma = vec![2.0, 0.5];
        norm.beta = vec![1.0, -1.0];
        let x = random_tensor(1, 2, 4, 4, 2);
        let (y, cache) = norm.forward(&x).unwrap();
        for c in 0..2 {
            for (yo, xh) in y.plane(0, c).iter().zip(cache.x_hat.plane(0, c)) {
                let expect = norm.gamma[c] * xh + norm.beta[c];
                assert!((yo - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn swish_known_values() {
        let x = Tensor4::from_vec(1, 1, 1, 3, vec![0.0, 1.0, -1.0]).unwrap();
        let (y, sig) = swish_forward(&x).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-13);
        assert_eq!(sig.data()[0], 0.5);

        // derivative at 0 is exactly 0.5
        let ones = Tensor4::from_vec(1, 1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let g = swish_backward(&x, &sig, &ones).unwrap();
        assert_eq!(g.data()[0], 0.5);
    }

    #[test]
    fn swish_gradient_matches_finite_differences() {
        let x = random_tensor(1, 2, 3, 4, 5);
        let mask = random_tensor(1, 2, 3, 4, 6);
        let (_, sig) = swish_forward(&x).unwrap();
        let g = swish_backward(&x, &sig, &mask).unwrap();
        let step = 1e-6;
        let probe = |t: &Tensor4| -> f64 {
            swish_forward(t)
                .unwrap()
                .0
                .data()
                .iter()
                .zip(mask.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        for i in 0..x.len() {
            let mut up = x.clone();
            up.data_mut()[i] += step;
            let mut dn = x.clone();
            dn.data_mut()[i] -= step;
            let fd = (probe(&up) - probe(&dn)) / (2.0 * step);
            let denom = g.data()[i].abs().max(fd.abs()).max(1e-8);
            assert!((g.data()[i] - fd).abs() / denom < 1e-5);
        }
    }

    #[test]
    fn norm_gradients_match_finite_differences() {
        let mut norm = InstanceNorm2d::new(2).unwrap();
        norm.gamma = vec![1.3, 0.7];
        norm.beta = vec![0.2, -0.4];
        let x = random_tensor(2, 2, 4, 4, 7);
        let mask = random_tensor(2, 2, 4, 4, 8);

        let (_, cache) = norm.forward(&x).unwrap();
        let (gx, ggamma, gbeta) = norm.backward(&mask, &cache).unwrap();

        let probe = |norm: &InstanceNorm2d, x: &Tensor4| -> f64 {
            let (y, _) = norm.forward(x).unwrap();
            y.data().iter().zip(mask.data()).map(|(a, b)| a * b).sum()
        };
        let step = 1e-4;

        for i in 0..x.len() {
            let mut up = x.clone();
            up.data_mut()[i] += step;
            let mut dn = x.clone();
            dn.data_mut()[i] -= step;
            let fd = (probe(&norm, &up) - probe(&norm, &dn)) / (2.0 * step);
            let denom = gx.data()[i].abs().max(fd.abs()).max(1e-6);
            assert!(
                (gx.data()[i] - fd).abs() / denom < 1e-4,
                "input {i}: {} vs {fd}",
                gx.data()[i]
            );
        }
        for c in 0..2 {
            let mut up = norm.clone();
            up.gamma[c] += step;
            let mut dn = norm.clone();
            dn.gamma[c] -= step;
            let fd = (probe(&up, &x) - probe(&dn, &x)) / (2.0 * step);
            assert!((ggamma[c] - fd).abs() / fd.abs().max(1e-6) < 1e-4);

            let mut up = norm.clone();
            up.beta[c] += step;
            let mut dn = norm.clone();
            dn.beta[c] -= step;
            let fd = (probe(&up, &x) - probe(&dn, &x)) / (2.0 * step);
            assert!((gbeta[c] - fd).abs() / fd.abs().max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn rejects_mismatched_channels() {
        let norm = InstanceNorm2d::new(3).unwrap();
        let x = random_tensor(1, 2, 4, 4, 9);
        assert!(norm.forward(&x).is_err());
        assert!(InstanceNorm2d::new(0).is_err());
    }
}
