use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub output: Tensor,
    /// Flat input index of the maximum chosen for each output element.
    pub argmax: Vec<usize>,
    pub input_shape: Vec<usize>,
}

/// Max pooling over the last axis of `[channels, length]`.
///
/// Output length is `floor((length − kernel) / stride) + 1`; ties go to the
/// first maximal index in the window.
pub fn maxpool1d(x: &Tensor, kernel: usize, stride: usize) -> Result<PoolOutput> {
    if x.ndim() != 2 {
        return Err(Error::shape(format!("maxpool1d expects [channels, length], got {:?}", x.shape())));
    }
    if kernel == 0 || stride == 0 {
        return Err(Error::arg("maxpool1d kernel and stride must be positive"));
    }
    let (channels, len) = (x.dim(0), x.dim(1));
    if len < kernel {
        return Err(Error::shape(format!("maxpool1d length {len} shorter than kernel {kernel}")));
    }
    let out_len = (len - kernel) / stride + 1;
    let mut out = Tensor::zeros(&[channels, out_len]);
    let mut argmax = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        let row = x.row(c);
        let dst = out.row_mut(c);
        for (w, slot) in dst.iter_mut().enumerate() {
            let start = w * stride;
            let mut best = start;
            for i in start + 1..start + kernel {
                if row[i] > row[best] {
                    best = i;
                }
            }
            *slot = row[best];
            argmax.push(c * len + best);
        }
    }
    Ok(PoolOutput {
        output: out,
        argmax,
        input_shape: vec![channels, len],
    })
}

/// Routes each upstream gradient to the input element that won its window.
pub fn maxpool1d_backward(pool: &PoolOutput, upstream: &Tensor) -> Result<Tensor> {
    if upstream.shape() != pool.output.shape() {
        return Err(Error::shape(format!(
            "maxpool1d upstream {:?}, expected {:?}",
            upstream.shape(),
            pool.output.shape()
        )));
    }
    let mut dx = Tensor::zeros(&pool.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in pool.argmax.iter().zip(upstream.data()) {
        d[idx] += g;
    }
    Ok(dx)
}
