use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let (f_out, f_in) = match *weight.dims() {
        [o, i] => (o, i),
        ref d => return Err(Error::shape(format!("dense: weights must be 2-D, got {d:?}"))),
    };
    if bias.dims() != [f_out] {
        return Err(Error::shape(format!(
            "dense: bias {:?} for {f_out} outputs",
            bias.dims()
        )));
    }
    let batch = match *input.dims() {
        [f] if f == f_in => 1,
        [b, f] if f == f_in => b,
        ref d => {
            return Err(Error::shape(format!(
                "dense: input {d:?} incompatible with weights [{f_out}, {f_in}]"
            )))
        }
    };
    Ok((batch, f_in, f_out))
}

/// `out = W x + b` for a vector `[F_in]` or each row of a batch `[B, F_in]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, f_in, f_out) = check(input, weight, bias)?;
    let dims = if input.dims().len() == 1 {
        vec![f_out]
    } else {
        vec![batch, f_out]
    };
    let mut out = Tensor::zeros(&dims);
    for row in out.data_mut().chunks_mut(f_out) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        batch,
        f_in,
        f_out,
        1.0,
        input.data(),
        false,
        weight.data(),
        true,
        1.0,
        out.data_mut(),
    );
    out.check_finite("dense")?;
    Ok(out)
}

/// Accumulates the gradients of `input`, `weight` and `bias` from `output.grad`.
pub fn dense_backward(
    input: &mut Tensor,
    weight: &mut Tensor,
    bias: &mut Tensor,
    output: &Tensor,
) -> Result<()> {
    dense_backward_params(input, weight, bias, output)?;
    let (batch, f_in, f_out) = check(input, weight, bias)?;
    gemm(
        batch,
        f_out,
        f_in,
        1.0,
        output.grad(),
        false,
        weight.data(),
        false,
        1.0,
        input.grad_mut(),
    );
    Ok(())
}

/// Parameter gradients only; used where the input is frozen.
pub fn dense_backward_params(
    input: &Tensor,
    weight: &mut Tensor,
    bias: &mut Tensor,
    output: &Tensor,
) -> Result<()> {
    let (batch, f_in, f_out) = check(input, weight, bias)?;
    if output.len() != batch * f_out {
        return Err(Error::shape(format!(
            "dense_backward: output {:?} for batch {batch} x {f_out}",
            output.dims()
        )));
    }
    let gout = output.grad();
    gemm(
        f_out,
        batch,
        f_in,
        1.0,
        gout,
        true,
        input.data(),
        false,
        1.0,
        weight.grad_mut(),
    );
    let gb = bias.grad_mut();
    for row in gout.chunks(f_out) {
        for (g, &r) in gb.iter_mut().zip(row) {
            *g += r;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 4] = 1.0;
        }
        let out = dense(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![5.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[16.0]);
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = Rng::new(9);
        let x = Tensor::randn(&[4, 128], 1.0, &mut rng);
        let w = Tensor::randn(&[64, 128], 0.1, &mut rng);
        let b = Tensor::randn(&[64], 1.0, &mut rng);
        let out = dense(&x, &w, &b).unwrap();
        for r in 0..4 {
            for o in 0..64 {
                let mut s = b.data()[o] as f64;
                for i in 0..128 {
                    s += x.data()[r * 128 + i] as f64 * w.data()[o * 128 + i] as f64;
                }
                assert!((out.data()[r * 64 + o] as f64 - s).abs() < 1e-5 * (1.0 + s.abs()));
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::zeros(&[3]);
        let w = Tensor::zeros(&[2, 4]);
        assert!(matches!(dense(&x, &w, &Tensor::zeros(&[2])), Err(Error::Shape(_))));
        let w = Tensor::zeros(&[2, 3]);
        assert!(matches!(dense(&x, &w, &Tensor::zeros(&[3])), Err(Error::Shape(_))));
    }
}
