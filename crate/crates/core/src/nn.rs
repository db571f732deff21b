//! Minimal convolution layers with explicit backward passes. Convolutions are
//! lowered to im2col + matrix products so the inner loops stay contiguous.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::gemm::{gemm, View};
use crate::rng::{self, Rng};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    /// He-initialized convolution with "same"-style padding of `kernel / 2`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = libm::sqrt(2.0 / fan_in);
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| rng::normal(rng) * std)
            .collect();
        Conv2d { in_channels, out_channels, kernel, stride, weight, bias: vec![0.0; out_channels] }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let p = 2 * self.pad();
        ((height + p - self.kernel) / self.stride + 1, (width + p - self.kernel) / self.stride + 1)
    }

    /// Output columns `ox` whose input column `ox * stride + kx - pad` is in bounds.
    fn valid_range(&self, kx: usize, out: usize, input: usize) -> (usize, usize) {
        let pad = self.pad();
        let lo = pad.saturating_sub(kx).div_ceil(self.stride);
        let hi = ((input + pad).saturating_sub(kx)).div_ceil(self.stride).min(out);
        (lo.min(hi), hi)
    }

    /// Lowers `input` to a `[patch][oh * ow]` matrix.
    pub fn im2col(&self, input: &Tensor3) -> Vec<f64> {
        let (oh, ow) = self.output_size(input.height, input.width);
        let (k, s, pad) = (self.kernel, self.stride, self.pad());
        let mut cols = Vec::with_capacity(self.patch() * oh * ow);
        for c in 0..self.in_channels {
            let plane = &input.data[c * input.height * input.width..(c + 1) * input.height * input.width];
            for ky in 0..k {
                let (ylo, yhi) = self.valid_range(ky, oh, input.height);
                for kx in 0..k {
                    let (xlo, xhi) = self.valid_range(kx, ow, input.width);
                    for oy in 0..oh {
                        if oy < ylo || oy >= yhi {
                            cols.resize(cols.len() + ow, 0.0);
                            continue;
                        }
                        let src = &plane[(oy * s + ky - pad) * input.width..][..input.width];
                        cols.resize(cols.len() + xlo, 0.0);
                        cols.extend((xlo..xhi).map(|ox| src[ox * s + kx - pad]));
                        cols.resize(cols.len() + ow - xhi, 0.0);
                    }
                }
            }
        }
        cols
    }

    /// Scatters the lowered gradient rows of input channel `c` back onto `plane`.
    fn col2im_channel(&self, rows: &[f64], plane: &mut [f64], height: usize, width: usize) {
        let (oh, ow) = self.output_size(height, width);
        let n = oh * ow;
        let (k, s, pad) = (self.kernel, self.stride, self.pad());
        for ky in 0..k {
            let (ylo, yhi) = self.valid_range(ky, oh, height);
            for kx in 0..k {
                let (xlo, xhi) = self.valid_range(kx, ow, width);
                let row = &rows[(ky * k + kx) * n..][..n];
                for oy in ylo..yhi {
                    let dst = &mut plane[(oy * s + ky - pad) * width..][..width];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for ox in xlo..xhi {
                        dst[ox * s + kx - pad] += src[ox];
                    }
                }
            }
        }
    }

    fn weight_view(&self) -> View<'_> {
        View::new(&self.weight, self.out_channels, self.patch())
    }

    /// Returns the output and the lowered input (needed for weight gradients).
    pub fn forward(&self, input: &Tensor3) -> (Tensor3, Vec<f64>) {
        debug_assert_eq!(input.channels, self.in_channels);
        let (oh, ow) = self.output_size(input.height, input.width);
        let n = oh * ow;
        let cols = self.im2col(input);
        let mut out = Tensor3::zeros(self.out_channels, oh, ow);
        for (co, dst) in out.data.chunks_exact_mut(n).enumerate() {
            dst.iter_mut().for_each(|v| *v = self.bias[co]);
        }
        gemm(self.weight_view(), View::new(&cols, self.patch(), n), 1.0, &mut out.data);
        (out, cols)
    }

    /// Gradient with respect to the layer input.
    pub fn backward_input(&self, grad_out: &Tensor3, in_height: usize, in_width: usize) -> Tensor3 {
        let n = grad_out.height * grad_out.width;
        let kk = self.kernel * self.kernel;
        let g = View::new(&grad_out.data, self.out_channels, n);
        let mut out = Tensor3::zeros(self.in_channels, in_height, in_width);
        let mut rows = vec![0.0; kk * n];
        let plane_len = in_height * in_width;
        for c in 0..self.in_channels {
            // rows of W^T belonging to input channel c
            let w = View {
                data: &self.weight[c * kk..],
                rows: kk,
                cols: self.out_channels,
                row_stride: 1,
                col_stride: self.patch(),
            };
            gemm(w, g, 0.0, &mut rows);
            self.col2im_channel(&rows, &mut out.data[c * plane_len..(c + 1) * plane_len], in_height, in_width);
        }
        out
    }

    /// Accumulates weight and bias gradients.
    pub fn backward_params(&self, grad_out: &Tensor3, cols: &[f64], grad_weight: &mut [f64], grad_bias: &mut [f64]) {
        let n = grad_out.height * grad_out.width;
        for (co, g) in grad_out.data.chunks_exact(n).enumerate() {
            grad_bias[co] += g.iter().sum::<f64>();
        }
        let g = View::new(&grad_out.data, self.out_channels, n);
        gemm(g, View::new(cols, self.patch(), n).t(), 1.0, grad_weight);
    }
}

/// Depthwise [1 2 1]/4 blur along both axes with zero padding. The operator
/// is symmetric, so it is its own adjoint.
pub fn blur121(t: &Tensor3) -> Tensor3 {
    let (h, w) = (t.height, t.width);
    let mut tmp = vec![0.0; t.data.len()];
    let mut out = Tensor3::zeros(t.channels, h, w);
    for c in 0..t.channels {
        let plane = &t.data[c * h * w..(c + 1) * h * w];
        let rows = &mut tmp[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let r = &plane[y * w..(y + 1) * w];
            for x in 0..w {
                let l = if x > 0 { r[x - 1] } else { 0.0 };
                let rr = if x + 1 < w { r[x + 1] } else { 0.0 };
                rows[y * w + x] = 0.25 * (l + 2.0 * r[x] + rr);
            }
        }
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let u = if y > 0 { rows[(y - 1) * w + x] } else { 0.0 };
                let d = if y + 1 < h { rows[(y + 1) * w + x] } else { 0.0 };
                dst[y * w + x] = 0.25 * (u + 2.0 * rows[y * w + x] + d);
            }
        }
    }
    out
}

pub fn relu_in_place(t: &mut Tensor3) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `grad` by the positive part of the post-activation `output`.
pub fn relu_backward(grad: &mut Tensor3, output: &Tensor3) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.learning_rate * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}
