//! 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
//!
//! Each sample is lowered to an im2col matrix of shape `[C_in*9, H*W]` so the
//! forward pass and both gradients are single GEMMs.

use rayon::prelude::*;

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;

/// Reads `[B, C, H, W]` or `[C, H, W]` (batch of one) as `(B, C, H, W)`.
pub(crate) fn image_dims(t: &Tensor, op: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.dims() {
        [b, c, h, w] => Ok((b, c, h, w)),
        [c, h, w] => Ok((1, c, h, w)),
        ref d => Err(Error::shape(format!("{op}: expected [B,C,H,W] or [C,H,W], got {d:?}"))),
    }
}

fn check_params(weight: &Tensor, bias: &Tensor, c_in: usize) -> Result<usize> {
    let c_out = match *weight.dims() {
        [co, ci, KERNEL, KERNEL] if ci == c_in => co,
        ref d => {
            return Err(Error::shape(format!(
                "conv2d: weights {d:?} incompatible with {c_in} input channels and a 3x3 kernel"
            )))
        }
    };
    if bias.dims() != [c_out] {
        return Err(Error::shape(format!(
            "conv2d: bias {:?} for {c_out} output channels",
            bias.dims()
        )));
    }
    Ok(c_out)
}

fn im2col(src: &[f32], c: usize, h: usize, w: usize, col: &mut [f32]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((ci * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f32], c: usize, h: usize, w: usize, dst: &mut [f32]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((ci * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// `output[c] = bias[c] + sum_ci input[ci] (*) weight[c, ci]` with zero padding.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, c_in, h, w) = image_dims(input, "conv2d")?;
    if h < KERNEL || w < KERNEL {
        return Err(Error::shape(format!("conv2d: input {h}x{w} smaller than the kernel")));
    }
    let c_out = check_params(weight, bias, c_in)?;
    let hw = h * w;
    let k = c_in * KERNEL * KERNEL;
    let mut out_dims = input.dims().to_vec();
    let channel_axis = out_dims.len() - 3;
    out_dims[channel_axis] = c_out;
    let mut out = Tensor::zeros(&out_dims);
    out.data_mut()
        .par_chunks_mut(c_out * hw)
        .zip(input.data().par_chunks(c_in * hw))
        .for_each_init(
            || vec![0.0f32; k * hw],
            |col, (dst, src)| {
                im2col(src, c_in, h, w, col);
                for (co, plane) in dst.chunks_mut(hw).enumerate() {
                    plane.fill(bias.data()[co]);
                }
                gemm(c_out, k, hw, 1.0, weight.data(), false, col, false, 1.0, dst);
            },
        );
    debug_assert_eq!(b * c_out * hw, out.len());
    out.check_finite("conv2d")?;
    Ok(out)
}

/// Backward pass: reads `output.grad` and accumulates into the gradients of
/// `input`, `weight` and `bias`.
pub fn conv2d_backward(
    input: &mut Tensor,
    weight: &mut Tensor,
    bias: &mut Tensor,
    output: &Tensor,
) -> Result<()> {
    conv2d_backward_impl(input, weight, bias, output, true)
}

/// As [`conv2d_backward`] but leaves `input.grad` untouched.
pub fn conv2d_backward_params(
    input: &mut Tensor,
    weight: &mut Tensor,
    bias: &mut Tensor,
    output: &Tensor,
) -> Result<()> {
    conv2d_backward_impl(input, weight, bias, output, false)
}

fn conv2d_backward_impl(
    input: &mut Tensor,
    weight: &mut Tensor,
    bias: &mut Tensor,
    output: &Tensor,
    propagate: bool,
) -> Result<()> {
    let (b, c_in, h, w) = image_dims(input, "conv2d_backward")?;
    let c_out = check_params(weight, bias, c_in)?;
    let hw = h * w;
    let k = c_in * KERNEL * KERNEL;
    if output.len() != b * c_out * hw {
        return Err(Error::shape(format!(
            "conv2d_backward: output {:?} does not match input {:?}",
            output.dims(),
            input.dims()
        )));
    }
    let gout = output.grad();

    // Parameter gradients are summed over the batch in sample order.
    let mut col = vec![0.0f32; k * hw];
    for s in 0..b {
        let src = &input.data()[s * c_in * hw..(s + 1) * c_in * hw];
        let g = &gout[s * c_out * hw..(s + 1) * c_out * hw];
        im2col(src, c_in, h, w, &mut col);
        gemm(c_out, hw, k, 1.0, g, false, &col, true, 1.0, weight.grad_mut());
        for (co, plane) in g.chunks(hw).enumerate() {
            bias.grad_mut()[co] += plane.iter().sum::<f32>();
        }
    }

    if propagate {
        let wdata = weight.data();
        input
            .grad_mut()
            .par_chunks_mut(c_in * hw)
            .zip(gout.par_chunks(c_out * hw))
            .for_each_init(
                || vec![0.0f32; k * hw],
                |dcol, (dx, g)| {
                    gemm(k, c_out, hw, 1.0, wdata, true, g, false, 0.0, dcol);
                    col2im_add(dcol, c_in, h, w, dx);
                },
            );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct six-loop convolution with explicit zero padding.
    fn reference(
        input: &[f32],
        c_in: usize,
        h: usize,
        w: usize,
        weight: &[f32],
        bias: &[f32],
        c_out: usize,
    ) -> Vec<f32> {
        let mut out = vec![0.0f32; c_out * h * w];
        for co in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[co] as f64;
                    for ci in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += input[(ci * h + sy as usize) * w + sx as usize] as f64
                                    * weight[((co * c_in + ci) * 3 + ky) * 3 + kx] as f64;
                            }
                        }
                    }
                    out[(co * h + y) * w + x] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let input = Tensor::full(&[1, 3, 3], 1.0);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let weight = Tensor::from_vec(&[1, 1, 3, 3], k).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d(&input, &weight, &bias).unwrap();
        assert_eq!(out.dims(), &[1, 3, 3]);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = Rng::new(1);
        let input = Tensor::randn(&[2, 5, 5], 1.0, &mut rng);
        let weight = Tensor::zeros(&[3, 2, 3, 3]);
        let bias = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d(&input, &weight, &bias).unwrap();
        for (c, plane) in out.data().chunks(25).enumerate() {
            assert!(plane.iter().all(|&v| v == bias.data()[c]));
        }
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = Rng::new(2);
        for &(ci, co, h, w) in &[(2, 4, 5, 5), (4, 3, 16, 16), (1, 2, 3, 7)] {
            let input = Tensor::randn(&[ci, h, w], 1.0, &mut rng);
            let weight = Tensor::randn(&[co, ci, 3, 3], 1.0, &mut rng);
            let bias = Tensor::randn(&[co], 1.0, &mut rng);
            let out = conv2d(&input, &weight, &bias).unwrap();
            let want = reference(input.data(), ci, h, w, weight.data(), bias.data(), co);
            for (a, b) in out.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn batched_equals_per_sample() {
        let mut rng = Rng::new(3);
        let input = Tensor::randn(&[3, 2, 6, 6], 1.0, &mut rng);
        let weight = Tensor::randn(&[4, 2, 3, 3], 1.0, &mut rng);
        let bias = Tensor::randn(&[4], 1.0, &mut rng);
        let out = conv2d(&input, &weight, &bias).unwrap();
        for s in 0..3 {
            let one = Tensor::from_vec(&[2, 6, 6], input.item(s).to_vec()).unwrap();
            let o = conv2d(&one, &weight, &bias).unwrap();
            assert_eq!(o.data(), out.item(s));
        }
    }

    #[test]
    fn shape_errors() {
        let input = Tensor::zeros(&[2, 5, 5]);
        let bias = Tensor::zeros(&[4]);
        assert!(matches!(
            conv2d(&input, &Tensor::zeros(&[4, 3, 3, 3]), &bias),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv2d(&input, &Tensor::zeros(&[4, 2, 5, 5]), &bias),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv2d(&Tensor::zeros(&[2, 2, 2]), &Tensor::zeros(&[4, 2, 3, 3]), &bias),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let input = Tensor::full(&[1, 3, 3], f32::MAX);
        let weight = Tensor::full(&[1, 1, 3, 3], f32::MAX);
        let r = conv2d(&input, &weight, &Tensor::zeros(&[1]));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
