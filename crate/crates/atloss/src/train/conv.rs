//! 2-D convolution (stride 1, same padding) with reverse-mode gradients.
//!
//! The kernels are written as whole-row accumulations over shifted slices:
//! for each (output channel, input channel, kernel tap) the inner loop is a
//! contiguous `dst += w * src` or a contiguous dot product, which the
//! compiler vectorizes. This layer dominates the consistency experiment's
//! runtime, so the hot loops avoid per-pixel bounds logic entirely.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::train::tensor::Tensor4;

/// `dst[x] += w * src[x + dx]` over the intersection of valid x ranges.
#[inline]
fn axpy_shifted(dst: &mut [f64], src: &[f64], w: f64, dx: isize) {
    let width = dst.len() as isize;
    debug_assert_eq!(src.len() as isize, width);
    let x0 = (-dx).max(0);
    let x1 = (width - dx).min(width);
    if x0 >= x1 {
        return;
    }
    let d = &mut dst[x0 as usize..x1 as usize];
    let s = &src[(x0 + dx) as usize..(x1 + dx) as usize];
    for (dv, sv) in d.iter_mut().zip(s) {
        *dv += w * sv;
    }
}

/// `sum_x a[x] * b[x + dx]` over the intersection of valid x ranges.
#[inline]
fn dot_shifted(a: &[f64], b: &[f64], dx: isize) -> f64 {
    let width = a.len() as isize;
    debug_assert_eq!(b.len() as isize, width);
    let x0 = (-dx).max(0);
    let x1 = (width - dx).min(width);
    if x0 >= x1 {
        return 0.0;
    }
    let av = &a[x0 as usize..x1 as usize];
    let bv = &b[(x0 + dx) as usize..(x1 + dx) as usize];
    // Eight independent accumulators so the reduction vectorizes; the
    // summation order is fixed, keeping results bit-reproducible.
    let mut acc = [0.0f64; 8];
    let mut ca = av.chunks_exact(8);
    let mut cb = bv.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// One row of a 3-wide horizontal stencil, the hot case of [`axpy_shifted`]:
/// `dst[x] += w[0]*src[x-1] + w[1]*src[x] + w[2]*src[x+1]`, taps outside the
/// row truncated.
#[inline]
fn stencil3_axpy(dst: &mut [f64], src: &[f64], w: [f64; 3]) {
    let n = dst.len();
    debug_assert_eq!(src.len(), n);
    if n == 0 {
        return;
    }
    if n == 1 {
        dst[0] += w[1] * src[0];
        return;
    }
    let last = n - 1;
    dst[0] += w[1] * src[0] + w[2] * src[1];
    let (s0, s1, s2) = (&src[..last - 1], &src[1..last], &src[2..]);
    for (((d, a), b), c) in dst[1..last].iter_mut().zip(s0).zip(s1).zip(s2) {
        *d += w[0] * a + w[1] * b + w[2] * c;
    }
    dst[last] += w[0] * src[last - 1] + w[1] * src[last];
}

/// Gradients of one convolution's parameters, shaped like the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Convolution layer: odd square kernel, stride 1, zero padding `k/2`, so
/// output spatial shape always equals input spatial shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    /// `[co][ci][ky][kx]`, row-major.
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Conv2d {
    /// Uniform fan-in initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid_param("channels", "must be positive"));
        }
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::invalid_param(
                "kernel",
                format!("must be odd and positive, got {kernel}"),
            ));
        }
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let unif = |rng: &mut ChaCha8Rng| (rng.gen::<f64>() * 2.0 - 1.0) * bound;
        let weight = (0..out_channels * fan_in).map(|_| unif(rng)).collect();
        let bias = (0..out_channels).map(|_| unif(rng)).collect();
        Ok(Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn zero_grads(&self) -> ConvGrads {
        ConvGrads {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    #[inline]
    fn tap(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.in_channels + ci) * self.kernel + ky) * self.kernel + kx
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::TensorShape {
                expected: format!("{} input channels", self.in_channels),
                got: format!("{} channels", x.channels()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let (n, _, h, w) = x.shape();
        let pad = (self.kernel / 2) as isize;
        let mut out = Tensor4::zeros(n, self.out_channels, h, w)?;

        for b in 0..n {
            for co in 0..self.out_channels {
                let bias = self.bias[co];
                out.plane_mut(b, co).fill(bias);
            }
            for ci in 0..self.in_channels {
                for co in 0..self.out_channels {
                    let src = x.plane(b, ci);
                    let dst = out.plane_mut(b, co);
                    for ky in 0..self.kernel {
                        let dy = ky as isize - pad;
                        if self.kernel == 3 {
                            let t = self.tap(co, ci, ky, 0);
                            let wrow =
                                [self.weight[t], self.weight[t + 1], self.weight[t + 2]];
                            for y in 0..h as isize {
                                let sy = y + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let src_row = &src[sy as usize * w..sy as usize * w + w];
                                let dst_row = &mut dst[y as usize * w..y as usize * w + w];
                                stencil3_axpy(dst_row, src_row, wrow);
                            }
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let wv = self.weight[self.tap(co, ci, ky, kx)];
                            let dx = kx as isize - pad;
                            for y in 0..h as isize {
                                let sy = y + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let src_row = &src[sy as usize * w..sy as usize * w + w];
                                let dst_row = &mut dst[y as usize * w..y as usize * w + w];
                                axpy_shifted(dst_row, src_row, wv, dx);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Parameter gradients, plus the input gradient when `need_input_grad`
    /// (the first layer of a network has no use for it).
    pub fn backward(
        &self,
        x: &Tensor4,
        grad_out: &Tensor4,
        need_input_grad: bool,
    ) -> Result<(ConvGrads, Option<Tensor4>)> {
        self.check_input(x)?;
        let (n, _, h, w) = x.shape();
        if grad_out.shape() != (n, self.out_channels, h, w) {
            return Err(Error::TensorShape {
                expected: format!("{n}x{}x{h}x{w} upstream gradient", self.out_channels),
                got: format!("{:?}", grad_out.shape()),
            });
        }
        let pad = (self.kernel / 2) as isize;
        let mut grads = self.zero_grads();

        for b in 0..n {
            for co in 0..self.out_channels {
                let g = grad_out.plane(b, co);
                grads.bias[co] += crate::train::fastmath::sum(g);
                for ci in 0..self.in_channels {
                    let src = x.plane(b, ci);
                    for ky in 0..self.kernel {
                        let dy = ky as isize - pad;
                        if self.kernel == 3 {
                            let mut acc = [0.0f64; 3];
                            for y in 0..h as isize {
                                let sy = y + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let g_row = &g[y as usize * w..y as usize * w + w];
                                let s_row = &src[sy as usize * w..sy as usize * w + w];
                                acc[0] += dot_shifted(g_row, s_row, -1);
                                acc[1] += dot_shifted(g_row, s_row, 0);
                                acc[2] += dot_shifted(g_row, s_row, 1);
                            }
                            let t = self.tap(co, ci, ky, 0);
                            grads.weight[t] += acc[0];
                            grads.weight[t + 1] += acc[1];
                            grads.weight[t + 2] += acc[2];
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let dx = kx as isize - pad;
                            let mut acc = 0.0;
                            for y in 0..h as isize {
                                let sy = y + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let g_row = &g[y as usize * w..y as usize * w + w];
                                let s_row =
                                    &src[sy as usize * w..sy as usize * w + w];
                                acc += dot_shifted(g_row, s_row, dx);
                            }
                            grads.weight[self.tap(co, ci, ky, kx)] += acc;
                        }
                    }
                }
            }
        }

        let grad_in = if need_input_grad {
            // Transposed pass: scatter each upstream row back through the
            // kernel, i.e. correlate with the flipped kernel.
            let mut gx = Tensor4::zeros(n, self.in_channels, h, w)?;
            for b in 0..n {
                for ci in 0..self.in_channels {
                    for co in 0..self.out_channels {
                        let g = grad_out.plane(b, co);
                        let dst = gx.plane_mut(b, ci);
                        for ky in 0..self.kernel {
                            let dy = ky as isize - pad;
                            if self.kernel == 3 {
                                // flipped taps: in[y][x] fed out[y-dy][x-dx]
                                let t = self.tap(co, ci, ky, 0);
                                let wrow =
                                    [self.weight[t + 2], self.weight[t + 1], self.weight[t]];
                                for y in 0..h as isize {
                                    let gy = y - dy;
                                    if gy < 0 || gy >= h as isize {
                                        continue;
                                    }
                                    let g_row = &g[gy as usize * w..gy as usize * w + w];
                                    let dst_row =
                                        &mut dst[y as usize * w..y as usize * w + w];
                                    stencil3_axpy(dst_row, g_row, wrow);
                                }
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let wv = self.weight[self.tap(co, ci, ky, kx)];
                                let dx = kx as isize - pad;
                                for y in 0..h as isize {
                                    // out[y - dy][x - dx] consumed in[y][x]
                                    let gy = y - dy;
                                    if gy < 0 || gy >= h as isize {
                                        continue;
                                    }
                                    let g_row = &g
                                        [gy as usize * w..gy as usize * w + w];
                                    let dst_row =
                                        &mut dst[y as usize * w..y as usize * w + w];
                                    axpy_shifted(dst_row, g_row, wv, -dx);
                                }
                            }
                        }
                    }
                }
            }
            Some(gx)
        } else {
            None
        };
        Ok((grads, grad_in))
    }
}
