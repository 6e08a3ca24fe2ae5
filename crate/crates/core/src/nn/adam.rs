use super::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    /// One bias-corrected Adam update of every parameter tensor.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::arg(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::shape(format!(
                    "adam tensor {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
