//! Handwritten forward/backward passes for the layers of the classifier.
//!
//! Every layer keeps its parameters in [`Tensor`]s and accumulates gradients
//! into a value of its own parameter type, so gradient buffers, optimizer
//! state and checkpoints all share one layout.

mod activation;
mod adam;
mod conv;
mod dense;
mod dropout;
pub(crate) mod gemm;
pub mod gradcheck;
mod init;
mod loss;
mod lrn;
mod lstm;
mod pool;
mod tensor;

pub use activation::{relu, relu_backward, sigmoid};
pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use conv::Conv1dParams;
pub use dense::DenseParams;
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use init::{glorot_uniform, seeded_rng, Rng};
pub use loss::{cross_entropy, l1_penalty, l1_penalty_into, softmax, softmax_cross_entropy_backward, PROB_FLOOR};
pub use lrn::LrnParams;
pub use lstm::{lstm_sequence, LstmLayerCache, LstmParams, LstmStepCache, LstmStack, LstmStackCache};
pub use pool::{maxpool1d, maxpool1d_backward, PoolOutput};
pub use tensor::Tensor;
