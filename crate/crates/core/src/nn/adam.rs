use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// Adam moment estimates, one pair of buffers per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(lr: f32) -> Self {
        Self {
            step: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update with bias correction. The L2 term is folded into the
/// gradient (`g + l2_weight * w`) before the moment updates.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, l2_weight: f32) -> Result<()> {
    if l2_weight < 0.0 {
        return Err(Error::config(format!("negative l2 weight {l2_weight}")));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "adam: state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].len() != p.len() {
            return Err(Error::shape(format!(
                "adam: parameter {i} has {} values, state has {}",
                p.len(),
                state.m[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = (1.0 - (b1 as f64).powi(t)) as f32;
    let bc2 = (1.0 - (b2 as f64).powi(t)) as f32;
    let (lr, eps) = (state.lr, state.eps);
    for (p, (m, v)) in params.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (w, g) = p.split_mut();
        for (((w, &g), m), v) in w.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g + l2_weight * *w;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
