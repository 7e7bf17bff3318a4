//! Software emulation of FP8 (1,5,2) mixed-precision neural-network training.
//!
//! * [`format`]: bit-exact minifloat codecs and rounding modes
//! * [`lfsr`]: the pseudo-random source behind stochastic rounding
//! * [`quant`]: tensors, Q nodes and FP8 GEMM/convolution kernels
//! * [`scaling`]: constant and back-off loss scaling with a minimum-threshold schedule
//! * [`harness`]: a small training loop with FP16 master weights

pub mod format;
pub mod harness;
pub mod lfsr;
pub mod quant;
pub mod scaling;

pub use format::{range_report, DynamicRange, Encoded, FloatFormat, Fp16Code, Fp8Code, Rounding, RoundingMode};
pub use lfsr::{Lfsr, LfsrWidth};
pub use quant::{QuantConfig, QuantizedTensor, Tensor};
pub use scaling::{LossScaler, ScaleAction, ScaleEvent};
