use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major f32 array with a same-shape gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
    grad: Vec<f32>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f32) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} hold {n} values but {} were given",
                data.len()
            )));
        }
        let grad = vec![0.0; n];
        Ok(Self {
            dims: dims.to_vec(),
            data,
            grad,
        })
    }

    /// Normal(0, std²) entries.
    pub fn randn(dims: &[usize], std: f32, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(dims);
        for x in &mut t.data {
            *x = rng.normal() * std;
        }
        t
    }

    /// Uniform entries in [lo, hi).
    pub fn uniform(dims: &[usize], lo: f32, hi: f32, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(dims);
        for x in &mut t.data {
            *x = rng.uniform_range(lo, hi);
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn grad(&self) -> &[f32] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f32] {
        &mut self.grad
    }

    /// Simultaneous access to values and gradient.
    pub fn split_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.data, &mut self.grad)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn set_grad(&mut self, grad: &[f32]) -> Result<()> {
        if grad.len() != self.grad.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for tensor {:?}",
                grad.len(),
                self.dims
            )));
        }
        self.grad.copy_from_slice(grad);
        Ok(())
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Leading dimension when the tensor is viewed as a batch of rows.
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Stacks equally shaped items under a new leading batch dimension.
    pub fn stack(items: &[&[f32]], item_dims: &[usize]) -> Result<Self> {
        let n: usize = item_dims.iter().product();
        let mut data = Vec::with_capacity(n * items.len());
        for item in items {
            if item.len() != n {
                return Err(Error::shape(format!(
                    "stack item of length {} for item dims {item_dims:?}",
                    item.len()
                )));
            }
            data.extend_from_slice(item);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(item_dims);
        Self::from_vec(&dims, data)
    }

    pub fn check_finite(&self, op: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{op} produced non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.grad().len(), 6);
    }

    #[test]
    fn nan_is_reported() {
        let t = Tensor::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(t.check_finite("x"), Err(Error::Numeric(_))));
    }
}
