use super::gemm::gemm;
use super::init::{glorot_uniform, Rng};
use super::Tensor;
use crate::error::{Error, Result};

/// One-dimensional convolution (cross-correlation) with zero SAME padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dParams {
    /// `[out_channels, in_channels, width]`
    pub kernels: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

impl Conv1dParams {
    pub fn zeros(out_channels: usize, in_channels: usize, width: usize) -> Self {
        assert!(width >= 1, "kernel width must be at least 1");
        Self {
            kernels: Tensor::zeros(&[out_channels, in_channels, width]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn init(out_channels: usize, in_channels: usize, width: usize, rng: &mut Rng) -> Self {
        assert!(width >= 1, "kernel width must be at least 1");
        let kernels = glorot_uniform(
            &[out_channels, in_channels, width],
            in_channels * width,
            out_channels * width,
            rng,
        );
        Self {
            kernels,
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kernels: self.kernels.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.dim(1)
    }

    pub fn width(&self) -> usize {
        self.kernels.dim(2)
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.ndim() != 2 || x.dim(0) != self.in_channels() {
            return Err(Error::shape(format!(
                "conv1d expects [{}, length], got {:?}",
                self.in_channels(),
                x.shape()
            )));
        }
        Ok((x.dim(0), x.dim(1)))
    }

    /// `x: [in_channels, length]` → `[out_channels, length]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, len) = self.check_input(x)?;
        let cols = im2col(x, self.width());
        let (cout, k) = (self.out_channels(), self.in_channels() * self.width());
        let mut out = Tensor::zeros(&[cout, len]);
        for (o, row) in out.data_mut().chunks_mut(len.max(1)).enumerate() {
            row.fill(self.bias.data()[o]);
        }
        gemm(cout, k, len, self.kernels.data(), false, &cols, false, out.data_mut(), 1.0);
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, x: &Tensor, upstream: &Tensor, grads: &mut Conv1dParams) -> Result<Tensor> {
        let (cin, len) = self.check_input(x)?;
        let cout = self.out_channels();
        if upstream.shape() != [cout, len] {
            return Err(Error::shape(format!(
                "conv1d upstream gradient {:?}, expected [{cout}, {len}]",
                upstream.shape()
            )));
        }
        let width = self.width();
        let k = cin * width;
        let cols = im2col(x, width);
        gemm(cout, len, k, upstream.data(), false, &cols, true, grads.kernels.data_mut(), 1.0);
        for (o, row) in upstream.data().chunks(len.max(1)).enumerate() {
            grads.bias.data_mut()[o] += row.iter().sum::<f64>();
        }
        let mut dcols = vec![0.0; k * len];
        gemm(k, cout, len, self.kernels.data(), true, upstream.data(), false, &mut dcols, 0.0);
        Ok(col2im(&dcols, cin, len, width))
    }
}

fn pad_left(width: usize) -> usize {
    (width - 1) / 2
}

/// `cols[(c·width + j), l] = x[c, l + j − pad]`, zero outside the input.
fn im2col(x: &Tensor, width: usize) -> Vec<f64> {
    let (cin, len) = (x.dim(0), x.dim(1));
    let pad = pad_left(width);
    let mut cols = vec![0.0; cin * width * len];
    for c in 0..cin {
        let src = x.row(c);
        for j in 0..width {
            let dst = &mut cols[(c * width + j) * len..(c * width + j + 1) * len];
            // valid l: 0 <= l + j - pad < len
            let lo = pad.saturating_sub(j);
            let hi = (len + pad).saturating_sub(j).min(len);
            if lo < hi {
                let s = lo + j - pad;
                dst[lo..hi].copy_from_slice(&src[s..s + (hi - lo)]);
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], cin: usize, len: usize, width: usize) -> Tensor {
    let pad = pad_left(width);
    let mut dx = Tensor::zeros(&[cin, len]);
    for c in 0..cin {
        let dst = dx.row_mut(c);
        for j in 0..width {
            let src = &cols[(c * width + j) * len..(c * width + j + 1) * len];
            let lo = pad.saturating_sub(j);
            let hi = (len + pad).saturating_sub(j).min(len);
            for l in lo..hi {
                dst[l + j - pad] += src[l];
            }
        }
    }
    dx
}
