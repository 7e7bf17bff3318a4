//! Mixed-precision training harness for small dense and convolutional
//! networks.
//!
//! The same network code runs in three regimes, chosen by the [`Engine`]:
//! plain FP32, FP8 with 16-bit boundary layers, and `f64` for gradient
//! checks.

use std::io;

use thiserror::Error;

use crate::quant::QuantError;
use crate::scaling::ScalerError;

pub mod data;
pub mod engine;
pub mod gradcheck;
pub mod model;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod train;

pub use data::{Dataset, Targets};
pub use engine::{BackwardStats, Engine, ExactEngine, QuantEngine, Site};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use model::{LayerKind, LayerPlan, LayerSpec, ModelSpec, PrecisionClass, Regularizer};
pub use network::{Forward, Gradients, Network, ParamTensor};
pub use optim::{l2_loss, Masters, OptimizerState, StepReport};
pub use scalar::Scalar;
pub use train::{
    evaluate, manifest, train, write_checkpoint, EvalMetrics, Precision, ScalerSpec, TrainConfig, TrainError,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid model: {0}")]
    Model(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad dataset: {0}")]
    Data(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Io(#[from] io::Error),
}
