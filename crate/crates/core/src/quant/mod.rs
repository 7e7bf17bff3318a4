//! Tensors, Q nodes and FP8-input kernels with FP32 accumulation.

pub mod io;
pub mod kernels;
pub mod tensor;

use thiserror::Error;

pub use kernels::{conv2d, conv2d_fp8, conv2d_im2col, gemm, gemm_fp8, im2col, Conv2dParams};
pub use tensor::{dequantize, quantize, quantize_as, QuantConfig, QuantizedTensor, Tensor, STREAM_CHUNK};

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("shape {shape:?} does not match {len} elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("expected a rank-{expected} tensor, got rank {got}")]
    Rank { expected: usize, got: usize },
    #[error("inner dimensions differ: {left} vs {right}")]
    InnerDimension { left: usize, right: usize },
    #[error("invalid convolution geometry: {0}")]
    ConvGeometry(String),
    #[error("format {0} is not supported here")]
    UnsupportedFormat(String),
    #[error("code does not fit the 8-bit format")]
    CodeOutOfRange,
    #[error("element {index} ({value}) is not exactly representable")]
    NotRepresentable { index: usize, value: f32 },
    #[error("quantization seed must be nonzero")]
    ZeroSeed,
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for QuantError {
    fn from(e: std::io::Error) -> Self {
        QuantError::Io(e.to_string())
    }
}
