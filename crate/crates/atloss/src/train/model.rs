//! The two-layer forecasting CNN: conv (in -> 16, 3x3, stride 1, pad 1),
//! instance norm, Swish, conv (16 -> 1). The output layer has no activation:
//! the AT loss applies its own sigmoid, so the model must emit raw
//! pre-activation values.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::train::conv::{Conv2d, ConvGrads};
use crate::train::norm::{swish_backward, swish_forward, InstanceNorm2d, NormCache};
use crate::train::tensor::Tensor4;

pub const HIDDEN_CHANNELS: usize = 16;
pub const KERNEL_SIZE: usize = 3;

const CHECKPOINT_MAGIC: &[u8; 4] = b"ATCK";
const CHECKPOINT_VERSION: u16 = 1;

/// Forward activations needed by [`CnnModel::backward`].
pub struct ModelCache {
    input: Tensor4,
    norm_cache: NormCache,
    /// Normalized activations entering Swish.
    pre_swish: Tensor4,
    /// Sigmoid of `pre_swish`, saved so backward skips the transcendentals.
    sigma: Tensor4,
    /// Swish output entering the second convolution.
    hidden: Tensor4,
}

/// Gradients for every parameter tensor, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub conv1: ConvGrads,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub conv2: ConvGrads,
}

impl ModelGrads {
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.gamma,
            &self.beta,
            &self.conv2.weight,
            &self.conv2.bias,
        ]
    }

    pub fn add(&mut self, other: &ModelGrads) {
        let add = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        };
        add(&mut self.conv1.weight, &other.conv1.weight);
        add(&mut self.conv1.bias, &other.conv1.bias);
        add(&mut self.gamma, &other.gamma);
        add(&mut self.beta, &other.beta);
        add(&mut self.conv2.weight, &other.conv2.weight);
        add(&mut self.conv2.bias, &other.conv2.bias);
    }

    pub fn scale(&mut self, s: f64) {
        for slice in [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.gamma,
            &mut self.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ] {
            for v in slice.iter_mut() {
                *v *= s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    conv1: Conv2d,
    norm: InstanceNorm2d,
    conv2: Conv2d,
}

impl CnnModel {
    /// Fresh model: uniform fan-in initialization for the hidden layer, zero
    /// output head with the bias at the lower normalization bound. The
    /// untrained model therefore forecasts the driest value everywhere, the
    /// right prior for precipitation grids.
    pub fn new(in_channels: usize, init_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let conv1 = Conv2d::new(in_channels, HIDDEN_CHANNELS, KERNEL_SIZE, &mut rng)?;
        let mut conv2 = Conv2d::new(HIDDEN_CHANNELS, 1, KERNEL_SIZE, &mut rng)?;
        conv2.weight.iter_mut().for_each(|w| *w = 0.0);
        conv2.bias[0] = -1.0;
        Ok(CnnModel {
            conv1,
            norm: InstanceNorm2d::new(HIDDEN_CHANNELS)?,
            conv2,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn param_count(&self) -> usize {
        self.conv1.weight().len()
            + self.conv1.bias().len()
            + self.norm.gamma().len()
            + self.norm.beta().len()
            + self.conv2.weight().len()
            + self.conv2.bias().len()
    }

    /// Parameter tensors in the fixed order matched by
    /// [`ModelGrads::slices`] and the checkpoint format.
    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.norm.gamma,
            &mut self.norm.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }

    pub fn param_slices(&self) -> [&[f64]; 6] {
        [
            self.conv1.weight(),
            self.conv1.bias(),
            self.norm.gamma(),
            self.norm.beta(),
            self.conv2.weight(),
            self.conv2.bias(),
        ]
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            conv1: self.conv1.zero_grads(),
            gamma: vec![0.0; HIDDEN_CHANNELS],
            beta: vec![0.0; HIDDEN_CHANNELS],
            conv2: self.conv2.zero_grads(),
        }
    }

    /// Forward pass; output has 1 channel and the input's spatial shape.
    pub fn forward(&self, input: &Tensor4) -> Result<(Tensor4, ModelCache)> {
        let c1 = self.conv1.forward(input)?;
        let (pre_swish, norm_cache) = self.norm.forward(&c1)?;
        let (hidden, sigma) = swish_forward(&pre_swish)?;
        let out = self.conv2.forward(&hidden)?;
        Ok((
            out,
            ModelCache {
                input: input.clone(),
                norm_cache,
                pre_swish,
                sigma,
                hidden,
            },
        ))
    }

    /// Output without gradient bookkeeping.
    pub fn predict(&self, input: &Tensor4) -> Result<Tensor4> {
        let c1 = self.conv1.forward(input)?;
        let (pre_swish, _) = self.norm.forward(&c1)?;
        let (hidden, _) = swish_forward(&pre_swish)?;
        self.conv2.forward(&hidden)
    }

    /// Reverse-mode gradients of every parameter for the scalar loss whose
    /// output gradient is `grad_out`.
    pub fn backward(&self, grad_out: &Tensor4, cache: &ModelCache) -> Result<ModelGrads> {
        let (conv2_grads, grad_hidden) = self.conv2.backward(&cache.hidden, grad_out, true)?;
        let grad_hidden = grad_hidden.expect("input gradient requested");
        let grad_pre_swish = swish_backward(&cache.pre_swish, &cache.sigma, &grad_hidden)?;
        let (grad_c1, gamma, beta) = self.norm.backward(&grad_pre_swish, &cache.norm_cache)?;
        // the first layer's input gradient is never consumed
        let (conv1_grads, _) = self.conv1.backward(&cache.input, &grad_c1, false)?;
        Ok(ModelGrads {
            conv1: conv1_grads,
            gamma,
            beta,
            conv2: conv2_grads,
        })
    }

    /// Serialize shapes and parameters (f32 little-endian) to `path`,
    /// atomically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(20 + self.param_count() * 4);
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend_from_slice(&(self.in_channels() as u32).to_le_bytes());
        bytes.extend_from_slice(&(HIDDEN_CHANNELS as u32).to_le_bytes());
        bytes.extend_from_slice(&(KERNEL_SIZE as u32).to_le_bytes());
        for slice in self.param_slices() {
            for v in slice {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let tmp = path.with_extension("atck.tmp");
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.display().to_string(),
            reason,
        };
        let bytes = fs::read(path)?;
        if bytes.len() < 20 {
            return Err(corrupt("file shorter than header".into()));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic, not a model checkpoint".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let read_u32 = |at: usize| {
            u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize
        };
        let in_channels = read_u32(8);
        let hidden = read_u32(12);
        let kernel = read_u32(16);
        if hidden != HIDDEN_CHANNELS || kernel != KERNEL_SIZE || in_channels == 0 {
            return Err(corrupt(format!(
                "unsupported architecture {in_channels}->{hidden}, kernel {kernel}"
            )));
        }

        let mut model = CnnModel::new(in_channels, 0)?;
        let expected = 20 + model.param_count() * 4;
        if bytes.len() != expected {
            return Err(corrupt(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut at = 20;
        for slice in model.param_slices_mut() {
            for v in slice.iter_mut() {
                let raw =
                    f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
                if !raw.is_finite() {
                    return Err(Error::CorruptFile {
                        path: path.display().to_string(),
                        reason: "non-finite parameter".into(),
                    });
                }
                *v = raw as f64;
                at += 4;
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * c * h * w)
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn output_shape_matches_input_spatially() {
        let model = CnnModel::new(1, 42).unwrap();
        let x = random_tensor(2, 1, 8, 10, 1);
        let (y, _) = model.forward(&x).unwrap();
        assert_eq!(y.shape(), (2, 1, 8, 10));
        let model5 = CnnModel::new(5, 42).unwrap();
        let x5 = random_tensor(1, 5, 6, 6, 2);
        assert_eq!(model5.predict(&x5).unwrap().shape(), (1, 1, 6, 6));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = CnnModel::new(1, 7).unwrap();
        let b = CnnModel::new(1, 7).unwrap();
        assert_eq!(a, b);
        let c = CnnModel::new(1, 8).unwrap();
        assert!(a != c);
    }

    #[test]
    fn all_parameter_gradients_match_finite_differences() {
        let model = CnnModel::new(1, 3).unwrap();
        let x = random_tensor(2, 1, 8, 8, 4);
        let mask = random_tensor(2, 1, 8, 8, 5);

        let (_, cache) = model.forward(&x).unwrap();
        let grads = model.backward(&mask, &cache).unwrap();

        let probe = |m: &CnnModel| -> f64 {
            m.predict(&x)
                .unwrap()
                .data()
                .iter()
                .zip(mask.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let step = 1e-4;
        let grad_slices = grads.slices();

        for (slice_idx, grad_slice) in grad_slices.iter().enumerate() {
            // probe a spread of parameters in each tensor
            let stride = (grad_slice.len() / 8).max(1);
            for i in (0..grad_slice.len()).step_by(stride) {
                let mut up = model.clone();
                up.param_slices_mut()[slice_idx][i] += step;
                let mut dn = model.clone();
                dn.param_slices_mut()[slice_idx][i] -= step;
                let fd = (probe(&up) - probe(&dn)) / (2.0 * step);
                let g = grad_slice[i];
                let denom = g.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (g - fd).abs() / denom < 1e-4,
                    "tensor {slice_idx} param {i}: analytic {g} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_zeroes_every_parameter_gradient() {
        let model = CnnModel::new(1, 9).unwrap();
        let x = random_tensor(1, 1, 6, 6, 10);
        let (_, cache) = model.forward(&x).unwrap();
        let zeros = Tensor4::zeros(1, 1, 6, 6).unwrap();
        let grads = model.backward(&zeros, &cache).unwrap();
        for slice in grads.slices() {
            assert!(slice.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn checkpoint_round_trips_at_f32_precision() {
        let dir = std::env::temp_dir().join("atloss-model-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.atck");

        let model = CnnModel::new(5, 77).unwrap();
        model.save_checkpoint(&path).unwrap();
        let back = CnnModel::load_checkpoint(&path).unwrap();
        assert_eq!(back.in_channels(), 5);
        for (a, b) in model.param_slices().iter().zip(back.param_slices().iter()) {
            for (va, vb) in a.iter().zip(b.iter()) {
                assert_eq!(*va as f32, *vb as f32);
            }
        }

        // corrupted magic is rejected
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(CnnModel::load_checkpoint(&path).is_err());
    }

    #[test]
    fn grads_accumulate_and_scale() {
        let model = CnnModel::new(1, 1).unwrap();
        let x = random_tensor(1, 1, 5, 5, 2);
        let mask = random_tensor(1, 1, 5, 5, 3);
        let (_, cache) = model.forward(&x).unwrap();
        let g = model.backward(&mask, &cache).unwrap();

        let mut acc = model.zero_grads();
        acc.add(&g);
        acc.add(&g);
        acc.scale(0.5);
        for (a, b) in acc.slices().iter().zip(g.slices().iter()) {
            for (va, vb) in a.iter().zip(b.iter()) {
                assert!((va - vb).abs() < 1e-15);
            }
        }
    }
}
