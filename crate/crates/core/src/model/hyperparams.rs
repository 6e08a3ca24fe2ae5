use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters. Defaults are the full-scale training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Full passes over the training set.
    pub epoch: usize,
    pub batchsize: usize,
    pub learn_rate: f64,
    pub dropout: f64,
    /// L1 weight on convolution and dense weights.
    pub lambda_conv: f64,
    /// L1 weight on LSTM weights.
    pub lambda_lstm: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            epoch: 5000,
            batchsize: 200,
            learn_rate: 0.0006,
            dropout: 0.5,
            lambda_conv: 0.0005,
            lambda_lstm: 0.00009,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epoch == 0 || self.batchsize == 0 {
            return Err(Error::arg("epoch and batchsize must be positive"));
        }
        if !(self.learn_rate > 0.0) {
            return Err(Error::arg(format!("learn_rate must be positive, got {}", self.learn_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.lambda_conv >= 0.0) || !(self.lambda_lstm >= 0.0) {
            return Err(Error::arg("L1 lambdas must be non-negative"));
        }
        Ok(())
    }
}
