use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::frame::{Frame, FRAME_SIZE};
use crate::nn::{
    conv2d, conv2d_backward, conv2d_backward_params, maxpool2, maxpool2_backward, relu,
    relu_backward, BatchNorm, BnCache, Mode, Pooled, Tensor,
};
use crate::rng::Rng;

/// Output channels of the four 3x3 convolutions.
pub const ENCODER_CHANNELS: [usize; 4] = [16, 32, 64, 64];
/// Spatial side of the final feature map (two 2x2 pools on a 64x64 input).
pub const FEATURE_SIDE: usize = FRAME_SIZE / 4;
/// Dimension of the embedding `h`.
pub const EMBED_DIM: usize = 64 * FEATURE_SIDE * FEATURE_SIDE;

/// Conv-BN-ReLU unit.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: BatchNorm,
}

impl ConvBlock {
    fn new(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / (c_in * 9) as f32).sqrt();
        Self {
            weight: Tensor::randn(&[c_out, c_in, 3, 3], std, rng),
            bias: Tensor::zeros(&[c_out]),
            bn: BatchNorm::new(c_out),
        }
    }
}

/// The shared encoder f: conv(16)-BN-ReLU, conv(32)-BN-ReLU, maxpool,
/// conv(64)-BN-ReLU, conv(64)-BN-ReLU, maxpool, flatten.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub blocks: Vec<ConvBlock>,
}

struct BlockTrace {
    input: Tensor,
    conv: Tensor,
    normed: Tensor,
    cache: BnCache,
}

/// Activations kept by a train-mode forward pass for the backward pass.
pub struct EncoderTrace {
    blocks: Vec<BlockTrace>,
    // relu outputs feeding the two pools
    pre_pool: [Tensor; 2],
    pools: [Pooled; 2],
}

/// Stacks frames into a `[B, 1, 64, 64]` batch.
pub fn frames_to_batch(frames: &[&Frame]) -> Result<Tensor> {
    let mut items = Vec::with_capacity(frames.len());
    for f in frames {
        f.require_size(FRAME_SIZE, FRAME_SIZE, "encoder input")?;
        if f.pixels().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("encoder input pixels must lie in [0, 1]".into()));
        }
        items.push(f.pixels());
    }
    if items.is_empty() {
        return Err(Error::Input("empty frame batch".into()));
    }
    Tensor::stack(&items, &[1, FRAME_SIZE, FRAME_SIZE])
}

impl Encoder {
    pub fn new(rng: &mut Rng) -> Self {
        let mut c_in = 1;
        let blocks = ENCODER_CHANNELS
            .iter()
            .map(|&c_out| {
                let b = ConvBlock::new(c_in, c_out, rng);
                c_in = c_out;
                b
            })
            .collect();
        Self { blocks }
    }

    fn check_input(images: &Tensor) -> Result<usize> {
        match *images.dims() {
            [b, 1, FRAME_SIZE, FRAME_SIZE] => Ok(b),
            ref d => Err(Error::shape(format!(
                "encoder expects [B, 1, {FRAME_SIZE}, {FRAME_SIZE}], got {d:?}"
            ))),
        }
    }

    /// Eval-mode embeddings `[B, EMBED_DIM]` using running BN statistics.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let b = Self::check_input(images)?;
        let mut x = images.clone();
        for (i, blk) in self.blocks.iter().enumerate() {
            let c = conv2d(&x, &blk.weight, &blk.bias)?;
            x = relu(&blk.bn.eval(&c)?);
            if i == 1 || i == 3 {
                x = maxpool2(&x)?.output;
            }
        }
        x.reshape(&[b, EMBED_DIM])
    }

    /// Embeds frames in chunks, returning one `EMBED_DIM` row per frame.
    pub fn embed_frames(&self, frames: &[&Frame], chunk: usize) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(frames.len());
        for part in frames.chunks(chunk.max(1)) {
            let h = self.embed(&frames_to_batch(part)?)?;
            out.extend(h.data().chunks(EMBED_DIM).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Forward pass that records activations. In eval mode the BN layers use
    /// running statistics, but backward still requires train mode.
    pub fn forward_train(&mut self, images: &Tensor) -> Result<(Tensor, EncoderTrace)> {
        let b = Self::check_input(images)?;
        let mut x = images.clone();
        let mut blocks = Vec::with_capacity(4);
        let mut pre_pool = Vec::with_capacity(2);
        let mut pools = Vec::with_capacity(2);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            let conv = conv2d(&x, &blk.weight, &blk.bias)?;
            let (normed, cache) = blk.bn.forward(&conv, Mode::Train)?;
            let act = relu(&normed);
            blocks.push(BlockTrace {
                input: x,
                conv,
                normed,
                cache: cache.expect("train mode returns a cache"),
            });
            x = if i == 1 || i == 3 {
                let p = maxpool2(&act)?;
                let next = p.output.clone();
                pre_pool.push(act);
                pools.push(p);
                next
            } else {
                act
            };
        }
        let h = x.reshape(&[b, EMBED_DIM])?;
        let trace = EncoderTrace {
            blocks,
            pre_pool: pre_pool.try_into().map_err(|_| Error::shape("pool trace"))?,
            pools: pools.try_into().map_err(|_| Error::shape("pool trace"))?,
        };
        Ok((h, trace))
    }

    /// Accumulates parameter gradients given `dL/dh` (`[B, EMBED_DIM]`).
    pub fn backward(&mut self, mut trace: EncoderTrace, grad_h: &[f32]) -> Result<()> {
        // `upstream` is the tensor whose grad holds dL/d(output of block i).
        let [pre0, pre1] = trace.pre_pool;
        let mut pre0 = Some(pre0);
        let [mut pool0, mut pool1] = trace.pools;
        pool1.output.set_grad(grad_h)?;
        let mut act3 = pre1;
        maxpool2_backward(&mut act3, &pool1)?;
        let mut upstream = act3;
        for i in (0..4).rev() {
            let mut bt = trace.blocks.pop().expect("four block traces");
            let blk = &mut self.blocks[i];
            relu_backward(&mut bt.normed, &upstream)?;
            blk.bn.backward(&mut bt.conv, &bt.normed, &bt.cache)?;
            if i == 0 {
                conv2d_backward_params(&mut bt.input, &mut blk.weight, &mut blk.bias, &bt.conv)?;
                break;
            }
            conv2d_backward(&mut bt.input, &mut blk.weight, &mut blk.bias, &bt.conv)?;
            upstream = if i == 2 {
                // input of block 2 is the first pool's output
                pool0.output.set_grad(bt.input.grad())?;
                let mut act1 = pre0.take().expect("first pool visited once");
                maxpool2_backward(&mut act1, &pool0)?;
                act1
            } else {
                bt.input
            };
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(16);
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let n = i + 1;
            out.push((format!("encoder.conv{n}.weight"), &b.weight));
            out.push((format!("encoder.conv{n}.bias"), &b.bias));
            out.push((format!("encoder.bn{n}.gamma"), &b.bn.gamma));
            out.push((format!("encoder.bn{n}.beta"), &b.bn.beta));
            out.push((format!("encoder.bn{n}.running_mean"), &b.bn.running_mean));
            out.push((format!("encoder.bn{n}.running_var"), &b.bn.running_var));
        }
        out
    }

    pub fn from_checkpoint(ck: &mut Checkpoint) -> Result<Self> {
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = 1;
        for (i, &c_out) in ENCODER_CHANNELS.iter().enumerate() {
            let n = i + 1;
            blocks.push(ConvBlock {
                weight: ck.take(&format!("encoder.conv{n}.weight"), &[c_out, c_in, 3, 3])?,
                bias: ck.take(&format!("encoder.conv{n}.bias"), &[c_out])?,
                bn: BatchNorm {
                    gamma: ck.take(&format!("encoder.bn{n}.gamma"), &[c_out])?,
                    beta: ck.take(&format!("encoder.bn{n}.beta"), &[c_out])?,
                    running_mean: ck.take(&format!("encoder.bn{n}.running_mean"), &[c_out])?,
                    running_var: ck.take(&format!("encoder.bn{n}.running_var"), &[c_out])?,
                },
            });
            c_in = c_out;
        }
        Ok(Self { blocks })
    }
}
