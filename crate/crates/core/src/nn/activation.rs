use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.zero_grad();
    for x in out.data_mut() {
        *x = x.max(0.0);
    }
    out
}

/// Gradient passes only where the input was strictly positive.
pub fn relu_backward(input: &mut Tensor, output: &Tensor) -> Result<()> {
    if input.len() != output.len() {
        return Err(Error::shape("relu_backward: size mismatch"));
    }
    let (x, gx) = input.split_mut();
    for ((g, &xv), &gy) in gx.iter_mut().zip(x.iter()).zip(output.grad()) {
        if xv > 0.0 {
            *g += gy;
        }
    }
    Ok(())
}

fn last_dim(t: &Tensor, op: &str) -> Result<usize> {
    let k = *t.dims().last().expect("tensor has at least one dim");
    if k < 2 {
        return Err(Error::shape(format!("{op}: need at least 2 classes, got {k}")));
    }
    Ok(k)
}

fn softmax_row(src: &[f32], dst: &mut [f32]) {
    let max = src.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0f64;
    for (d, &s) in dst.iter_mut().zip(src) {
        let e = ((s - max) as f64).exp();
        *d = e as f32;
        sum += e;
    }
    for d in dst.iter_mut() {
        *d = (*d as f64 / sum) as f32;
    }
}

/// Softmax over the last axis with max subtraction.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let k = last_dim(input, "softmax")?;
    let mut out = Tensor::zeros(input.dims());
    for (src, dst) in input.data().chunks(k).zip(out.data_mut().chunks_mut(k)) {
        softmax_row(src, dst);
    }
    Ok(out)
}

/// `dx = y * (dy - <dy, y>)` per row.
pub fn softmax_backward(input: &mut Tensor, output: &Tensor) -> Result<()> {
    let k = last_dim(output, "softmax_backward")?;
    if input.len() != output.len() {
        return Err(Error::shape("softmax_backward: size mismatch"));
    }
    for ((gx, y), gy) in input
        .grad_mut()
        .chunks_mut(k)
        .zip(output.data().chunks(k))
        .zip(output.grad().chunks(k))
    {
        let dot: f64 = y.iter().zip(gy).map(|(&a, &b)| a as f64 * b as f64).sum();
        for ((g, &yv), &gyv) in gx.iter_mut().zip(y).zip(gy) {
            *g += (yv as f64 * (gyv as f64 - dot)) as f32;
        }
    }
    Ok(())
}

/// Mean cross-entropy of softmax(logits) against class labels. Returns the loss
/// and the probabilities, and accumulates `(p - onehot) / B` into `logits.grad`.
pub fn softmax_cross_entropy(logits: &mut Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let k = last_dim(logits, "softmax_cross_entropy")?;
    let rows = logits.len() / k;
    if labels.len() != rows {
        return Err(Error::shape(format!(
            "softmax_cross_entropy: {} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::shape(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0f64;
    let scale = 1.0 / rows as f32;
    for ((p, g), &label) in probs
        .data()
        .chunks(k)
        .zip(logits.grad_mut().chunks_mut(k))
        .zip(labels)
    {
        loss -= (p[label].max(f32::MIN_POSITIVE) as f64).ln();
        for (c, (gv, &pv)) in g.iter_mut().zip(p).enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            *gv += (pv - target) * scale;
        }
    }
    Ok(((loss / rows as f64) as f32, probs))
}

/// Inverted-dropout keep mask: each entry is `0` or `1 / (1 - p)`.
#[derive(Clone, Debug)]
pub struct DropMask(Vec<f32>);

/// Train mode zeroes each element with probability `p` and rescales the rest;
/// eval mode (or `p == 0`) is the identity and returns no mask.
pub fn dropout(
    input: &Tensor,
    p: f32,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Tensor, Option<DropMask>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
    }
    let mut out = input.clone();
    out.zero_grad();
    if mode == Mode::Eval || p == 0.0 {
        return Ok((out, None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
        .collect();
    for (x, &m) in out.data_mut().iter_mut().zip(&mask) {
        *x *= m;
    }
    Ok((out, Some(DropMask(mask))))
}

pub fn dropout_backward(input: &mut Tensor, output: &Tensor, mask: Option<&DropMask>) -> Result<()> {
    if input.len() != output.len() {
        return Err(Error::shape("dropout_backward: size mismatch"));
    }
    let gin = input.grad_mut();
    match mask {
        None => {
            for (g, &gy) in gin.iter_mut().zip(output.grad()) {
                *g += gy;
            }
        }
        Some(DropMask(m)) => {
            for ((g, &gy), &mv) in gin.iter_mut().zip(output.grad()).zip(m) {
                *g += gy * mv;
            }
        }
    }
    Ok(())
}
