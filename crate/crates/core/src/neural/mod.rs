//! Recurrent interaction-aware velocity predictor: layers, model, training
//! and weight serialization.

pub mod io;
pub mod lstm;
pub mod model;
pub mod tensor;
pub mod train;

pub use io::{load_weights, save_weights, write_loss_curve};
pub use model::{
    backward, forward, forward_batch, loss, loss_and_gradient, BatchGradient, ForwardOptions, ModelConfig,
    ModelWeights, TENSOR_NAMES,
};
pub use train::{train, train_with_progress, Example, LossPoint, TrainConfig, TrainOutcome};
