use super::conv::image_dims;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Output of [`maxpool2`]: the pooled tensor plus, for every output cell, the
/// flat input index that produced it.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<u32>,
}

/// 2x2 max pooling with stride 2. Ties resolve to the first cell in
/// row-major order within the window.
pub fn maxpool2(input: &Tensor) -> Result<Pooled> {
    let (b, c, h, w) = image_dims(input, "maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool2: odd spatial dims {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out_dims = input.dims().to_vec();
    let n = out_dims.len();
    out_dims[n - 2] = oh;
    out_dims[n - 1] = ow;
    let mut output = Tensor::zeros(&out_dims);
    let mut argmax = vec![0u32; b * c * oh * ow];
    let src = input.data();
    let dst = output.data_mut();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                dst[o] = src[best];
                argmax[o] = best as u32;
            }
        }
    }
    Ok(Pooled { output, argmax })
}

/// Routes `pooled.output.grad` back to the winning input cells.
pub fn maxpool2_backward(input: &mut Tensor, pooled: &Pooled) -> Result<()> {
    if pooled.argmax.len() * 4 != input.len() {
        return Err(Error::shape("maxpool2_backward: argmax does not match input"));
    }
    let gin = input.grad_mut();
    for (&idx, &g) in pooled.argmax.iter().zip(pooled.output.grad()) {
        gin[idx as usize] += g;
    }
    Ok(())
}
