//! Per-channel batch normalization over `[B, C, ...]` inputs.

use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Normalized activations and inverse std saved by a train-mode forward.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

fn layout(input: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let d = input.dims();
    if d.len() < 2 || d[1] != channels {
        return Err(Error::shape(format!(
            "batchnorm: input {d:?} does not have {channels} channels on axis 1"
        )));
    }
    Ok((d[0], d[2..].iter().product()))
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with the running estimates.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        let (b, s) = layout(input, c)?;
        let mut out = Tensor::zeros(input.dims());
        let x = input.data();
        let o = out.data_mut();
        for ch in 0..c {
            let inv = 1.0 / (self.running_var.data()[ch] + BN_EPS).sqrt();
            let scale = self.gamma.data()[ch] * inv;
            let shift = self.beta.data()[ch] - self.running_mean.data()[ch] * scale;
            for n in 0..b {
                let off = (n * c + ch) * s;
                for i in off..off + s {
                    o[i] = x[i] * scale + shift;
                }
            }
        }
        out.check_finite("batchnorm")?;
        Ok(out)
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// estimates; eval mode uses the running estimates and returns no cache.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<BnCache>)> {
        let c = self.channels();
        let (b, s) = layout(input, c)?;
        let mut out = Tensor::zeros(input.dims());
        match mode {
            Mode::Eval => Ok((self.eval(input)?, None)),
            Mode::Train => {
                if b < 2 {
                    return Err(Error::config("batchnorm in train mode needs a batch of at least 2"));
                }
                let m = (b * s) as f64;
                let x = input.data();
                let mut xhat = vec![0.0f32; x.len()];
                let mut inv_std = vec![0.0f32; c];
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    for n in 0..b {
                        let off = (n * c + ch) * s;
                        sum += x[off..off + s].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / m;
                    let mut sq = 0.0f64;
                    for n in 0..b {
                        let off = (n * c + ch) * s;
                        sq += x[off..off + s]
                            .iter()
                            .map(|&v| (v as f64 - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / m;
                    let inv = 1.0 / (var + BN_EPS as f64).sqrt();
                    inv_std[ch] = inv as f32;
                    let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
                    let o = out.data_mut();
                    for n in 0..b {
                        let off = (n * c + ch) * s;
                        for i in off..off + s {
                            let xh = ((x[i] as f64 - mean) * inv) as f32;
                            xhat[i] = xh;
                            o[i] = g * xh + be;
                        }
                    }
                    let unbiased = sq / (m - 1.0);
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean as f32;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * unbiased as f32;
                }
                out.check_finite("batchnorm")?;
                Ok((out, Some(BnCache { xhat, inv_std })))
            }
        }
    }

    /// Standard batch-norm gradient through batch statistics; accumulates into
    /// `input.grad`, `gamma.grad` and `beta.grad`.
    pub fn backward(&mut self, input: &mut Tensor, output: &Tensor, cache: &BnCache) -> Result<()> {
        let c = self.channels();
        let (b, s) = layout(input, c)?;
        if output.len() != input.len() || cache.xhat.len() != input.len() {
            return Err(Error::shape("batchnorm_backward: size mismatch"));
        }
        let m = (b * s) as f64;
        let gy = output.grad();
        let xhat = &cache.xhat;
        for ch in 0..c {
            let g = self.gamma.data()[ch] as f64;
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for n in 0..b {
                let off = (n * c + ch) * s;
                for i in off..off + s {
                    sum_dy += gy[i] as f64;
                    sum_dy_xhat += gy[i] as f64 * xhat[i] as f64;
                }
            }
            self.gamma.grad_mut()[ch] += sum_dy_xhat as f32;
            self.beta.grad_mut()[ch] += sum_dy as f32;
            let k = g * cache.inv_std[ch] as f64 / m;
            let gx = input.grad_mut();
            for n in 0..b {
                let off = (n * c + ch) * s;
                for i in off..off + s {
                    gx[i] += (k * (m * gy[i] as f64 - sum_dy - xhat[i] as f64 * sum_dy_xhat)) as f32;
                }
            }
        }
        Ok(())
    }
}
