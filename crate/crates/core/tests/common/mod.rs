//! Helpers shared by several integration-test targets.
#![allow(dead_code)]

use viewmatch::contrastive::nt_xent_loss;
use viewmatch::nn::*;
use viewmatch::{Result, Rng};

pub const GRAD_TOL: f64 = 1e-3;

fn probe(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

/// Values whose pairwise gaps all exceed twice the finite-difference step, so
/// max-pool winners never change under perturbation.
fn spaced_values(rng: &mut Rng, n: usize) -> Vec<f32> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.into_iter().map(|k| k as f32 * 0.01 - n as f32 * 0.005).collect()
}

fn worst(reports: &[GradCheckReport]) -> GradCheckReport {
    reports
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .cloned()
        .expect("at least one report")
}

// Each `*_instance` draws one random instance and returns the worst
// finite-difference report over all of its gradients.

pub fn dense_instance(rng: &mut Rng) -> GradCheckReport {
    let x = Tensor::randn(&[3, 8], 0.5, rng);
    let w = Tensor::randn(&[4, 8], 0.5, rng);
    let b = Tensor::randn(&[4], 0.5, rng);
    let r = probe(rng, 12);
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| -> Result<f64> { Ok(weighted_sum(dense(x, w, b)?.data(), &r)) };
    let (mut xg, mut wg, mut bg) = (x.clone(), w.clone(), b.clone());
    let mut out = dense(&x, &w, &b).unwrap();
    out.set_grad(&r).unwrap();
    dense_backward(&mut xg, &mut wg, &mut bg, &out).unwrap();
    worst(&[
        grad_check(&x, xg.grad(), |t| loss(t, &w, &b), GRAD_TOL).unwrap(),
        grad_check(&w, wg.grad(), |t| loss(&x, t, &b), GRAD_TOL).unwrap(),
        grad_check(&b, bg.grad(), |t| loss(&x, &w, t), GRAD_TOL).unwrap(),
    ])
}

pub fn conv2d_instance(rng: &mut Rng) -> GradCheckReport {
    let x = Tensor::randn(&[2, 2, 6, 6], 0.5, rng);
    let w = Tensor::randn(&[3, 2, 3, 3], 0.5, rng);
    let b = Tensor::randn(&[3], 0.5, rng);
    let r = probe(rng, 2 * 3 * 36);
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| -> Result<f64> { Ok(weighted_sum(conv2d(x, w, b)?.data(), &r)) };
    let (mut xg, mut wg, mut bg) = (x.clone(), w.clone(), b.clone());
    let mut out = conv2d(&x, &w, &b).unwrap();
    out.set_grad(&r).unwrap();
    conv2d_backward(&mut xg, &mut wg, &mut bg, &out).unwrap();
    worst(&[
        grad_check(&x, xg.grad(), |t| loss(t, &w, &b), GRAD_TOL).unwrap(),
        grad_check(&w, wg.grad(), |t| loss(&x, t, &b), GRAD_TOL).unwrap(),
        grad_check(&b, bg.grad(), |t| loss(&x, &w, t), GRAD_TOL).unwrap(),
    ])
}

/// Inputs at least 0.05 away from the kink at 0.
pub fn relu_instance(rng: &mut Rng) -> GradCheckReport {
    let data: Vec<f32> = (0..50)
        .map(|_| {
            let m = rng.uniform_range(0.05, 2.0);
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor::from_vec(&[50], data).unwrap();
    let r = probe(rng, 50);
    let mut xg = x.clone();
    let mut out = relu(&x);
    out.set_grad(&r).unwrap();
    relu_backward(&mut xg, &out).unwrap();
    grad_check(&x, xg.grad(), |t| Ok(weighted_sum(relu(t).data(), &r)), GRAD_TOL).unwrap()
}

pub fn maxpool_instance(rng: &mut Rng) -> GradCheckReport {
    let x = Tensor::from_vec(&[2, 2, 4, 4], spaced_values(rng, 64)).unwrap();
    let r = probe(rng, 16);
    let mut xg = x.clone();
    let mut pooled = maxpool2(&x).unwrap();
    pooled.output.set_grad(&r).unwrap();
    maxpool2_backward(&mut xg, &pooled).unwrap();
    grad_check(&x, xg.grad(), |t| Ok(weighted_sum(maxpool2(t)?.output.data(), &r)), GRAD_TOL).unwrap()
}

pub fn softmax_instance(rng: &mut Rng) -> GradCheckReport {
    let x = Tensor::randn(&[4, 5], 1.0, rng);
    let r = probe(rng, 20);
    let mut xg = x.clone();
    let mut out = softmax(&x).unwrap();
    out.set_grad(&r).unwrap();
    softmax_backward(&mut xg, &out).unwrap();
    grad_check(&x, xg.grad(), |t| Ok(weighted_sum(softmax(t)?.data(), &r)), GRAD_TOL).unwrap()
}

pub fn batchnorm_instance(rng: &mut Rng) -> GradCheckReport {
    let x = Tensor::randn(&[4, 3, 2, 2], 1.5, rng);
    let mut bn = BatchNorm::new(3);
    bn.gamma = Tensor::uniform(&[3], 0.5, 1.5, rng);
    bn.beta = Tensor::randn(&[3], 0.5, rng);
    let r = probe(rng, x.len());
    let mut xg = x.clone();
    let mut work = bn.clone();
    let (mut out, cache) = work.forward(&x, Mode::Train).unwrap();
    out.set_grad(&r).unwrap();
    work.backward(&mut xg, &out, cache.as_ref().unwrap()).unwrap();
    let with = |gamma: Option<&Tensor>, beta: Option<&Tensor>, x: &Tensor| -> Result<f64> {
        let mut b = bn.clone();
        if let Some(g) = gamma {
            b.gamma = g.clone();
        }
        if let Some(be) = beta {
            b.beta = be.clone();
        }
        Ok(weighted_sum(b.forward(x, Mode::Train)?.0.data(), &r))
    };
    worst(&[
        grad_check(&x, xg.grad(), |t| with(None, None, t), GRAD_TOL).unwrap(),
        grad_check(&bn.gamma, work.gamma.grad(), |g| with(Some(g), None, &x), GRAD_TOL).unwrap(),
        grad_check(&bn.beta, work.beta.grad(), |b| with(None, Some(b), &x), GRAD_TOL).unwrap(),
    ])
}

pub fn softmax_ce_instance(rng: &mut Rng) -> GradCheckReport {
    let x = Tensor::randn(&[6, 2], 1.0, rng);
    let labels: Vec<usize> = (0..6).map(|_| rng.below(2)).collect();
    let mut xg = x.clone();
    softmax_cross_entropy(&mut xg, &labels).unwrap();
    grad_check(
        &x,
        xg.grad(),
        |t| Ok(softmax_cross_entropy(&mut t.clone(), &labels)?.0 as f64),
        GRAD_TOL,
    )
    .unwrap()
}

/// NT-Xent over a random N = 4 batch of 8-dimensional projections.
pub fn nt_xent_instance(rng: &mut Rng) -> GradCheckReport {
    let dim = 8;
    let z = Tensor::randn(&[8, dim], 1.0, rng);
    let tau = rng.uniform_range(0.2, 1.0);
    let (_, g) = nt_xent_loss(z.data(), dim, tau).unwrap();
    grad_check(&z, &g, |t| Ok(nt_xent_loss(t.data(), dim, tau)?.0), GRAD_TOL).unwrap()
}

/// Direct enumeration of the per-anchor NT-Xent terms, averaged over all 2N
/// anchors; the partner of row `i` is row `i ^ 1`.
pub fn nt_xent_oracle(z: &[f32], dim: usize, tau: f64) -> f64 {
    let rows = z.len() / dim;
    let row = |i: usize| &z[i * dim..(i + 1) * dim];
    let sim = |i: usize, k: usize| {
        let (a, b) = (row(i), row(k));
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for i in 0..rows {
        let j = if i % 2 == 0 { i + 1 } else { i - 1 };
        let num = (sim(i, j) / tau).exp();
        let mut den = 0.0;
        for k in 0..rows {
            if k != i {
                den += (sim(i, k) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / rows as f64
}
