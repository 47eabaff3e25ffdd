//! Non-negative CNN-LSTM surrogate for product-concentration snapshots.
//!
//! A small from-scratch network library (f64, explicit reverse mode) plus the
//! model, training loop, autoregressive rollout and the RTNN model format.

pub mod adam;
pub mod data;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod rollout;
pub mod rtnn;
pub mod sequential;
pub mod tensor;
pub mod train;

pub use data::{make_training_samples, TrainingSet};
pub use model::{build_model, CnnLstm, ModelConfig, Normalization, TrainedModel};
pub use rollout::{rollout, Rollout};
pub use sequential::Sequential;
pub use tensor::{NnError, Param, Tensor};
pub use train::{new_model, train, TrainError};
