use super::encoder::{EncoderTrace, EMBED_DIM};
use super::Encoder;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{
    dense, dense_backward, dense_backward_params, dropout, dropout_backward, relu, relu_backward,
    softmax, softmax_cross_entropy, DropMask, Mode, Tensor,
};
use crate::rng::Rng;

/// Width of the projection space `z`.
pub const PROJ_DIM: usize = 512;
/// Output widths of the four classifier layers.
pub const CLASSIFIER_WIDTHS: [usize; 4] = [2048, 1024, 512, 2];
/// Input width of the pair classifier: `[h_i ; h_j]`.
pub const PAIR_DIM: usize = 2 * EMBED_DIM;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn new(f_in: usize, f_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Tensor::randn(&[f_out, f_in], (2.0 / f_in as f32).sqrt(), rng),
            bias: Tensor::zeros(&[f_out]),
        }
    }

    fn from_checkpoint(ck: &mut Checkpoint, prefix: &str, f_in: usize, f_out: usize) -> Result<Self> {
        Ok(Self {
            weight: ck.take(&format!("{prefix}.weight"), &[f_out, f_in])?,
            bias: ck.take(&format!("{prefix}.bias"), &[f_out])?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dense(x, &self.weight, &self.bias)
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

/// Activations of a hidden dense-ReLU-dropout stage.
struct HiddenTrace {
    input: Tensor,
    pre: Tensor,
    act: Tensor,
    out: Tensor,
    mask: Option<DropMask>,
}

fn hidden_forward(layer: &Linear, input: Tensor, p: f32, mode: Mode, rng: &mut Rng) -> Result<HiddenTrace> {
    let pre = layer.forward(&input)?;
    let act = relu(&pre);
    let (out, mask) = dropout(&act, p, rng, mode)?;
    Ok(HiddenTrace {
        input,
        pre,
        act,
        out,
        mask,
    })
}

/// Backpropagates `t.out.grad` through dropout, ReLU and the dense layer.
/// Returns the stage input carrying its gradient unless `propagate` is false.
fn hidden_backward(layer: &mut Linear, mut t: HiddenTrace, propagate: bool) -> Result<Tensor> {
    dropout_backward(&mut t.act, &t.out, t.mask.as_ref())?;
    relu_backward(&mut t.pre, &t.act)?;
    if propagate {
        dense_backward(&mut t.input, &mut layer.weight, &mut layer.bias, &t.pre)?;
    } else {
        dense_backward_params(&t.input, &mut layer.weight, &mut layer.bias, &t.pre)?;
    }
    Ok(t.input)
}

/// Projection head g: dense-ReLU-dropout-dense into the contrastive space.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f32,
}

pub struct ProjectionTrace {
    hidden: HiddenTrace,
}

impl Projection {
    pub fn new(dropout: f32, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::new(EMBED_DIM, PROJ_DIM, rng),
            fc2: Linear::new(PROJ_DIM, PROJ_DIM, rng),
            dropout,
        }
    }

    fn check(h: &Tensor) -> Result<()> {
        match *h.dims() {
            [_, EMBED_DIM] => Ok(()),
            ref d => Err(Error::shape(format!("projection expects [B, {EMBED_DIM}], got {d:?}"))),
        }
    }

    /// `z = g(h)` for a batch `[B, EMBED_DIM]`.
    pub fn forward(&self, h: Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, ProjectionTrace)> {
        Self::check(&h)?;
        let hidden = hidden_forward(&self.fc1, h, self.dropout, mode, rng)?;
        let z = self.fc2.forward(&hidden.out)?;
        Ok((z, ProjectionTrace { hidden }))
    }

    /// Eval-mode projection of a batch.
    pub fn project(&self, h: &Tensor) -> Result<Tensor> {
        Self::check(h)?;
        let a = relu(&self.fc1.forward(h)?);
        self.fc2.forward(&a)
    }

    /// Given `z` with its gradient set, accumulates parameter gradients and
    /// returns `dL/dh`.
    pub fn backward(&mut self, mut trace: ProjectionTrace, z: &Tensor) -> Result<Vec<f32>> {
        dense_backward(&mut trace.hidden.out, &mut self.fc2.weight, &mut self.fc2.bias, z)?;
        let h = hidden_backward(&mut self.fc1, trace.hidden, true)?;
        Ok(h.grad().to_vec())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.fc1.named("projection.fc1", &mut out);
        self.fc2.named("projection.fc2", &mut out);
        out
    }

    pub fn from_checkpoint(ck: &mut Checkpoint, dropout: f32) -> Result<Self> {
        Ok(Self {
            fc1: Linear::from_checkpoint(ck, "projection.fc1", EMBED_DIM, PROJ_DIM)?,
            fc2: Linear::from_checkpoint(ck, "projection.fc2", PROJ_DIM, PROJ_DIM)?,
            dropout,
        })
    }
}

/// Pair classifier over concatenated embeddings: three dense-ReLU-dropout
/// stages (2048, 1024, 512) and a 2-way output with softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub layers: Vec<Linear>,
    pub dropout: f32,
}

pub struct ClassifierTrace {
    hidden: Vec<HiddenTrace>,
}

/// Concatenates embedding pairs into a `[B, PAIR_DIM]` batch.
pub fn pair_batch(pairs: &[(&[f32], &[f32])]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(pairs.len() * PAIR_DIM);
    for (a, b) in pairs {
        if a.len() != EMBED_DIM || b.len() != EMBED_DIM {
            return Err(Error::shape(format!(
                "pair embeddings of length {} and {}, expected {EMBED_DIM}",
                a.len(),
                b.len()
            )));
        }
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    Tensor::from_vec(&[pairs.len(), PAIR_DIM], data)
}

impl Classifier {
    pub fn new(dropout: f32, rng: &mut Rng) -> Self {
        let mut f_in = PAIR_DIM;
        let layers = CLASSIFIER_WIDTHS
            .iter()
            .map(|&f_out| {
                let l = Linear::new(f_in, f_out, rng);
                f_in = f_out;
                l
            })
            .collect();
        Self { layers, dropout }
    }

    fn check(x: &Tensor) -> Result<()> {
        match *x.dims() {
            [_, PAIR_DIM] => Ok(()),
            ref d => Err(Error::shape(format!("classifier expects [B, {PAIR_DIM}], got {d:?}"))),
        }
    }

    /// Logits `[B, 2]` plus the trace for a training step.
    pub fn forward(&self, x: Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, ClassifierTrace)> {
        Self::check(&x)?;
        let mut hidden = Vec::with_capacity(3);
        let mut cur = x;
        for layer in &self.layers[..3] {
            let t = hidden_forward(layer, cur, self.dropout, mode, rng)?;
            cur = t.out.clone();
            hidden.push(t);
        }
        let logits = self.layers[3].forward(&cur)?;
        Ok((logits, ClassifierTrace { hidden }))
    }

    /// Eval-mode class probabilities `[p_neg, p_pos]` per row.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Self::check(x)?;
        let mut cur = relu(&self.layers[0].forward(x)?);
        for layer in &self.layers[1..3] {
            cur = relu(&layer.forward(&cur)?);
        }
        softmax(&self.layers[3].forward(&cur)?)
    }

    /// Cross-entropy training step gradients; the input is treated as frozen.
    /// Returns the mean loss and the probabilities.
    pub fn backward_ce(
        &mut self,
        mut trace: ClassifierTrace,
        mut logits: Tensor,
        labels: &[usize],
    ) -> Result<(f32, Tensor)> {
        let (loss, probs) = softmax_cross_entropy(&mut logits, labels)?;
        let mut upstream = trace.hidden.pop().expect("three hidden stages");
        let head = &mut self.layers[3];
        dense_backward(&mut upstream.out, &mut head.weight, &mut head.bias, &logits)?;
        for i in (0..3).rev() {
            let input = hidden_backward(&mut self.layers[i], upstream, i > 0)?;
            if i == 0 {
                break;
            }
            let mut prev = trace.hidden.pop().expect("hidden stage");
            prev.out.set_grad(input.grad())?;
            upstream = prev;
        }
        Ok((loss, probs))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.named(&format!("classifier.fc{}", i + 1), &mut out);
        }
        out
    }

    pub fn from_checkpoint(ck: &mut Checkpoint, dropout: f32) -> Result<Self> {
        let mut f_in = PAIR_DIM;
        let mut layers = Vec::with_capacity(4);
        for (i, &f_out) in CLASSIFIER_WIDTHS.iter().enumerate() {
            layers.push(Linear::from_checkpoint(ck, &format!("classifier.fc{}", i + 1), f_in, f_out)?);
            f_in = f_out;
        }
        Ok(Self { layers, dropout })
    }
}

/// Supervised baseline: an encoder trained from scratch on pairs, with
/// `[h_i ; h_j]` fed to a single dense 2-way layer and softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedModel {
    pub encoder: Encoder,
    pub head: Linear,
}

impl SupervisedModel {
    pub fn new(rng: &mut Rng) -> Self {
        Self {
            encoder: Encoder::new(rng),
            head: Linear::new(PAIR_DIM, 2, rng),
        }
    }

    /// Eval-mode probabilities for `[2B, 1, 64, 64]` images where rows `2k`
    /// and `2k + 1` form pair `k`.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let h = self.encoder.embed(images)?;
        let pairs = h.batch() / 2;
        let x = h.reshape(&[pairs, PAIR_DIM])?;
        softmax(&self.head.forward(&x)?)
    }

    /// One training forward/backward over interleaved pair images. Returns
    /// the mean cross-entropy; gradients accumulate into all parameters.
    pub fn train_step(&mut self, images: &Tensor, labels: &[usize]) -> Result<f32> {
        let n = images.dims()[0];
        if n != 2 * labels.len() {
            return Err(Error::shape(format!("{n} images for {} pairs", labels.len())));
        }
        let (h, trace): (Tensor, EncoderTrace) = self.encoder.forward_train(images)?;
        let mut x = h.reshape(&[labels.len(), PAIR_DIM])?;
        let mut logits = self.head.forward(&x)?;
        let (loss, _) = softmax_cross_entropy(&mut logits, labels)?;
        dense_backward(&mut x, &mut self.head.weight, &mut self.head.bias, &logits)?;
        self.encoder.backward(trace, x.grad())?;
        Ok(loss)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.push(&mut self.head.weight);
        p.push(&mut self.head.bias);
        p
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named_tensors();
        self.head.named("supervised.head", &mut out);
        out
    }

    pub fn from_checkpoint(ck: &mut Checkpoint) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::from_checkpoint(ck)?,
            head: Linear::from_checkpoint(ck, "supervised.head", PAIR_DIM, 2)?,
        })
    }
}
