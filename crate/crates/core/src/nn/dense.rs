use super::gemm::gemm;
use super::init::{glorot_uniform, Rng};
use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer, `y = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: glorot_uniform(&[outputs, inputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim(0)
    }

    /// Batch size of `x`, which is either `[in]` or `[batch, in]`.
    fn rows(&self, x: &Tensor) -> Result<usize> {
        match x.shape() {
            [n] if *n == self.inputs() => Ok(1),
            [b, n] if *n == self.inputs() => Ok(*b),
            s => Err(Error::shape(format!(
                "dense expects [{}] or [batch, {}], got {:?}",
                self.inputs(),
                self.inputs(),
                s
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rows = self.rows(x)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let shape: Vec<usize> = if x.ndim() == 1 { vec![n_out] } else { vec![rows, n_out] };
        let mut y = Tensor::zeros(&shape);
        for r in 0..rows {
            y.data_mut()[r * n_out..(r + 1) * n_out].copy_from_slice(self.bias.data());
        }
        gemm(rows, n_in, n_out, x.data(), false, self.weight.data(), true, y.data_mut(), 1.0);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, x: &Tensor, upstream: &Tensor, grads: &mut DenseParams) -> Result<Tensor> {
        let rows = self.rows(x)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if upstream.len() != rows * n_out {
            return Err(Error::shape(format!(
                "dense upstream {:?} does not match {rows} rows of {n_out}",
                upstream.shape()
            )));
        }
        gemm(n_out, rows, n_in, upstream.data(), true, x.data(), false, grads.weight.data_mut(), 1.0);
        for row in upstream.data().chunks(n_out) {
            for (b, g) in grads.bias.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(rows, n_out, n_in, upstream.data(), false, self.weight.data(), false, dx.data_mut(), 0.0);
        Ok(dx)
    }
}
