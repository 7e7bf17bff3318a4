//! Precision policy for the network math.
//!
//! Layers call [`Engine::quantize`] at every Q-node site and
//! [`Engine::matmul`] for every GEMM. [`ExactEngine`] is the unquantized
//! reference (FP32 baseline, or `f64` for gradient checks); [`QuantEngine`]
//! inserts FP8/FP16 Q nodes and runs the GEMMs through the quantized kernels.

use crate::format::{FloatFormat, RoundingMode};
use crate::lfsr::derive_seed;
use crate::quant::{gemm, quantize_as, QuantConfig, QuantizedTensor, Tensor};

use super::model::PrecisionClass;
use super::scalar::Scalar;

/// Where in the dataflow a Q node sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    /// Activation entering a GEMM/convolution.
    Input,
    /// Weights entering a GEMM/convolution.
    Weight,
    /// Forward GEMM/convolution output.
    Output,
    /// Error tensor entering a layer's backward GEMMs.
    Error,
    /// Backward GEMM output passed to the previous layer.
    ErrorOut,
    /// Weight and bias gradients.
    WeightGrad,
    /// tanh/sigmoid output (always 16-bit).
    Activation,
    /// tanh/sigmoid backward output (always 16-bit).
    ActivationError,
}

impl Site {
    pub fn is_backward(self) -> bool {
        matches!(
            self,
            Site::Error | Site::ErrorOut | Site::WeightGrad | Site::ActivationError
        )
    }

    /// Format used at this site for a layer of the given class.
    pub fn format(self, class: PrecisionClass) -> FloatFormat {
        match self {
            Site::Activation | Site::ActivationError => FloatFormat::FP16,
            _ => class.format(),
        }
    }
}

/// Tallies over all backward-path Q nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackwardStats {
    pub elements: usize,
    pub underflows: usize,
    pub overflows: usize,
}

impl BackwardStats {
    pub fn underflow_fraction(&self) -> f64 {
        if self.elements == 0 {
            0.0
        } else {
            self.underflows as f64 / self.elements as f64
        }
    }
}

pub trait Engine<T: Scalar> {
    /// Apply the Q node for `site` in place.
    fn quantize(&mut self, data: &mut [T], class: PrecisionClass, site: Site);

    /// `a [m×k] · b [k×n]`, row-major, reduction index ascending.
    fn matmul(&mut self, a: &[T], b: &[T], dims: (usize, usize, usize), class: PrecisionClass) -> Vec<T>;

    fn stats(&self) -> BackwardStats {
        BackwardStats::default()
    }
}

/// Reference matmul with a fixed, k-ascending accumulation order.
pub fn matmul_reference<T: Scalar>(a: &[T], b: &[T], (m, k, n): (usize, usize, usize)) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// No quantization anywhere.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactEngine;

impl<T: Scalar> Engine<T> for ExactEngine {
    fn quantize(&mut self, _data: &mut [T], _class: PrecisionClass, _site: Site) {}

    fn matmul(&mut self, a: &[T], b: &[T], dims: (usize, usize, usize), _class: PrecisionClass) -> Vec<T> {
        matmul_reference(a, b, dims)
    }
}

/// FP8 training regime. Every Q node gets its own stochastic-rounding
/// stream, derived from the base seed, the current stream path (set per
/// step with [`QuantEngine::begin`]) and the node's call index.
#[derive(Debug, Clone)]
pub struct QuantEngine {
    mode: RoundingMode,
    saturate: bool,
    seed: u64,
    path: Vec<u64>,
    calls: u64,
    stats: BackwardStats,
}

impl QuantEngine {
    pub fn new(mode: RoundingMode, seed: u64, saturate: bool) -> Self {
        Self {
            mode,
            saturate,
            seed,
            path: Vec::new(),
            calls: 0,
            stats: BackwardStats::default(),
        }
    }

    /// Start a new pass; resets the node counter and the statistics.
    pub fn begin(&mut self, path: &[u64]) {
        self.path.clear();
        self.path.extend_from_slice(path);
        self.calls = 0;
        self.stats = BackwardStats::default();
    }

    pub fn mode(&self) -> RoundingMode {
        self.mode
    }

    fn next_config(&mut self) -> QuantConfig {
        let mut path = self.path.clone();
        path.push(self.calls);
        self.calls += 1;
        QuantConfig {
            mode: self.mode,
            seed: derive_seed(self.seed, &path).max(1),
            saturate_on_overflow: self.saturate,
        }
    }

    fn to_codes(values: &[f32], rows: usize, cols: usize, format: FloatFormat) -> QuantizedTensor {
        QuantizedTensor::from_representable(vec![rows, cols], values, format)
            .expect("GEMM operands must come out of a Q node of the same format")
    }
}

impl Engine<f32> for QuantEngine {
    fn quantize(&mut self, data: &mut [f32], class: PrecisionClass, site: Site) {
        let cfg = self.next_config();
        let t = Tensor::new(vec![data.len()], data.to_vec()).expect("1-D shape");
        let q = quantize_as(&t, site.format(class), &cfg).expect("FP8/FP16 are code formats");
        let table = crate::format::decode_table(q.format()).expect("code format");
        for (d, &c) in data.iter_mut().zip(q.codes()) {
            *d = table[c as usize];
        }
        if site.is_backward() {
            self.stats.elements += data.len();
            self.stats.underflows += q.underflow_count();
            self.stats.overflows += q.overflow_count();
        }
    }

    fn matmul(&mut self, a: &[f32], b: &[f32], (m, k, n): (usize, usize, usize), class: PrecisionClass) -> Vec<f32> {
        let format = class.format();
        let qa = Self::to_codes(a, m, k, format);
        let qb = Self::to_codes(b, k, n, format);
        gemm(&qa, &qb).expect("dims agree").into_data()
    }

    fn stats(&self) -> BackwardStats {
        self.stats
    }
}
