//! From-scratch 1D convolutional regression network: layers with analytic
//! gradients, the three-branch model, training and evaluation.

use thiserror::Error;

use crate::wave::WaveError;

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use layers::{BatchNorm, Cache, Conv1d, Dense, Layer, Mode};
pub use model::{build_tribranch, count_params, input_tensor, predict, prepare, Branch, Model, ModelConfig, ParamCount, TARGETS};
pub use tensor::Tensor;
pub use train::{evaluate, evaluate_predictions, mae_loss, train, train_observed, Adam, TrainConfig, TrainReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward pass without a matching forward cache")]
    MissingCache,
    #[error("bad model configuration: {0}")]
    BadConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize, report: Box<TrainReport> },
    #[error(transparent)]
    Wave(#[from] WaveError),
}
