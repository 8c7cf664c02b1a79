//! Reconstruction of completely missing variables in multivariate time
//! series.
//!
//! An LSTM autoencoder is trained on fully observed datasets. Its parameters
//! are then frozen, the missing feature columns become differentiable inputs,
//! and Adam optimizes them against a loss over the available features only.
//! Everything needed to differentiate the network lives in [`autodiff`];
//! [`circuit`] produces benchmark data from a nonlinear filter.

pub mod autodiff;
pub mod circuit;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod reconstruct;
pub mod tensor;
pub mod training;

pub use autodiff::{grad_check, Gradients, OpKind, Tape, Var};
pub use error::{Error, Result};
pub use nn::{AutoencoderParams, NetConfig};
pub use preprocess::{ScalerParams, TimeSeriesSet, WindowBatch};
pub use reconstruct::{reconstruct, ReconstructionResult, ReconstructionSpec};
pub use tensor::Tensor;
pub use training::{train, LossHistory, TrainConfig, TrainedModel};
