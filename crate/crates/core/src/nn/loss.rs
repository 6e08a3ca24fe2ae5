use super::Tensor;
use crate::error::{Error, Result};

/// Lower clamp on probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-shifted softmax; safe for arbitrarily large logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty vector");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::arg(format!("label {label} out of range for {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(z), label)` with respect to `z`: `probs − onehot(label)`.
pub fn softmax_cross_entropy_backward(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= probs.len() {
        return Err(Error::arg(format!("label {label} out of range for {} classes", probs.len())));
    }
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

/// `lambda · Σ|w|` and its subgradient `lambda · sign(w)` with `sign(0) = 0`.
pub fn l1_penalty(weights: &Tensor, lambda: f64) -> (f64, Tensor) {
    let mut grad = weights.zeros_like();
    let loss = l1_penalty_into(weights, lambda, &mut grad);
    (loss, grad)
}

/// Like [`l1_penalty`] but adds the gradient into `grad` in place.
pub fn l1_penalty_into(weights: &Tensor, lambda: f64, grad: &mut Tensor) -> f64 {
    debug_assert_eq!(weights.shape(), grad.shape());
    if lambda == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (g, &w) in grad.data_mut().iter_mut().zip(weights.data()) {
        sum += w.abs();
        if w > 0.0 {
            *g += lambda;
        } else if w < 0.0 {
            *g -= lambda;
        }
    }
    lambda * sum
}
