use super::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes the upstream gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Tensor {
    let mut dx = upstream.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
