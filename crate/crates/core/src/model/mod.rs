//! The convolutional + recurrent traffic classifier.
//!
//! ```text
//! 784 → conv(32×25) → relu → pool(3/3) → lrn → conv(64×25) → relu → pool(3/3) → lrn
//!     → flatten 5568 → dense 1024 → relu → dropout → reshape 32×32
//!     → lstm 256 ×3 (dropout on each output) → dense num_classes → softmax
//! ```

mod checkpoint;
mod hyperparams;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, TrainingMeta};
pub use hyperparams::Hyperparams;
pub use network::{Architecture, ForwardMode, Penalty, Prediction, ShapeTrace, TrafficNet};
pub use train::{train, EpochRecord, TrainOutcome};
