use rand::Rng as _;

use super::init::Rng;
use super::Tensor;
use crate::error::{Error, Result};

/// Per-element multiplier: `0` for dropped elements, `1/(1−p)` for survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

/// Inverted dropout. Identity (and no mask) when `training` is false or `p == 0`.
pub fn dropout(x: &Tensor, p: f64, rng: &mut Rng, training: bool) -> Result<(Tensor, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("dropout probability must be in [0, 1), got {p}")));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(DropoutMask(mask))))
}

pub fn dropout_backward(upstream: &Tensor, mask: Option<&DropoutMask>) -> Tensor {
    let mut dx = upstream.clone();
    if let Some(DropoutMask(m)) = mask {
        for (v, s) in dx.data_mut().iter_mut().zip(m) {
            *v *= s;
        }
    }
    dx
}
