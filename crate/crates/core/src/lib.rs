//! Open-set recognition by joint training of a shared encoder, a softmax
//! classifier and a normalizing flow over the encoder's latent space.
//!
//! Samples whose latent log-likelihood falls below a threshold calibrated
//! on the training set are rejected as unknown.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flow;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod net;
pub mod optim;
pub mod protocol;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Architecture, ModelParams, Regime};
pub use tensor::Tensor;
pub use trainer::{fit, train_step, TrainConfig};
