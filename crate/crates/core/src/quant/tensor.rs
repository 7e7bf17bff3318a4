use rayon::prelude::*;

use crate::format::{decode_table, FloatFormat, Rounding, RoundingMode};
use crate::lfsr::Lfsr;

use super::QuantError;

/// Elements per stochastic-rounding substream. Each chunk gets its own
/// stream derived from the seed and the chunk index, so the result does not
/// depend on how chunks are scheduled.
pub const STREAM_CHUNK: usize = 1024;

/// Dense row-major FP32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, QuantError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(QuantError::ShapeMismatch { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, QuantError> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// How a Q node converts FP32 values down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantConfig {
    pub mode: RoundingMode,
    /// Must be nonzero.
    pub seed: u64,
    /// Clamp overflowing magnitudes to the largest finite value instead of
    /// producing ±Inf. The overflow is still counted.
    pub saturate_on_overflow: bool,
}

impl QuantConfig {
    pub fn new(mode: RoundingMode, seed: u64) -> Result<Self, QuantError> {
        if seed == 0 {
            return Err(QuantError::ZeroSeed);
        }
        Ok(Self {
            mode,
            seed,
            saturate_on_overflow: false,
        })
    }

    pub fn nearest_even() -> Self {
        Self {
            mode: RoundingMode::NearestEven,
            seed: 1,
            saturate_on_overflow: false,
        }
    }

    pub fn saturating(mut self, on: bool) -> Self {
        self.saturate_on_overflow = on;
        self
    }
}

/// A tensor stored as FP8 (or FP16) codes plus the statistics of the Q node
/// that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) codes: Vec<u16>,
    pub(crate) format: FloatFormat,
    pub(crate) mode: RoundingMode,
    pub(crate) overflow_count: usize,
    pub(crate) underflow_count: usize,
}

pub(crate) fn check_code_format(format: FloatFormat) -> Result<(), QuantError> {
    if decode_table(format).is_none() {
        return Err(QuantError::UnsupportedFormat(format.name()));
    }
    Ok(())
}

impl QuantizedTensor {
    pub fn from_codes(
        shape: Vec<usize>,
        codes: Vec<u16>,
        format: FloatFormat,
        mode: RoundingMode,
    ) -> Result<Self, QuantError> {
        check_code_format(format)?;
        let expected: usize = shape.iter().product();
        if expected != codes.len() {
            return Err(QuantError::ShapeMismatch {
                shape,
                len: codes.len(),
            });
        }
        if format.width() == 8 && codes.iter().any(|&c| c > 0xff) {
            return Err(QuantError::CodeOutOfRange);
        }
        Ok(Self {
            shape,
            codes,
            format,
            mode,
            overflow_count: 0,
            underflow_count: 0,
        })
    }

    /// Encode values that are already exact in `format`; fails on the first
    /// value that would need rounding.
    pub fn from_representable(shape: Vec<usize>, values: &[f32], format: FloatFormat) -> Result<Self, QuantError> {
        check_code_format(format)?;
        let codes = values
            .iter()
            .enumerate()
            .map(|(i, &v)| exact_code(format, v).ok_or(QuantError::NotRepresentable { index: i, value: v }))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_codes(shape, codes, format, RoundingMode::NearestEven)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn format(&self) -> FloatFormat {
        self.format
    }

    pub fn mode_used(&self) -> RoundingMode {
        self.mode
    }

    pub fn overflow_count(&self) -> usize {
        self.overflow_count
    }

    pub fn underflow_count(&self) -> usize {
        self.underflow_count
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub(crate) fn table(&self) -> &'static [f32] {
        decode_table(self.format).expect("validated at construction")
    }

    pub fn value(&self, index: usize) -> f32 {
        self.table()[self.codes[index] as usize]
    }

    /// Swap the axes of a 2-D tensor (code permutation only).
    pub fn transpose(&self) -> Result<Self, QuantError> {
        let [rows, cols] = self.shape[..] else {
            return Err(QuantError::Rank {
                expected: 2,
                got: self.shape.len(),
            });
        };
        let mut codes = vec![0u16; self.codes.len()];
        for r in 0..rows {
            for c in 0..cols {
                codes[c * rows + r] = self.codes[r * cols + c];
            }
        }
        Ok(Self {
            shape: vec![cols, rows],
            codes,
            ..self.clone()
        })
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, QuantError> {
        if shape.iter().product::<usize>() != self.codes.len() {
            return Err(QuantError::ShapeMismatch {
                shape,
                len: self.codes.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Q node into FP8.
/// Code of `v` in `format` when `v` is exactly representable there, read
/// straight off the FP32 bit pattern. Formats must have fewer than 23
/// mantissa bits.
fn exact_code(format: FloatFormat, v: f32) -> Option<u16> {
    let bits = v.to_bits();
    let sign = if bits >> 31 == 1 { format.sign_mask() } else { 0 };
    let a = bits & 0x7fff_ffff;
    let m = format.mantissa_bits();
    let code = if a == 0 {
        0
    } else if v.is_nan() {
        format.nan_bits()
    } else if v.is_infinite() {
        format.infinity_bits()
    } else {
        let field32 = (a >> 23) as i32;
        if field32 == 0 {
            return None;
        }
        let e = field32 - 127;
        let sig = (1u32 << 23) | (a & 0x7f_ffff);
        if e > format.max_exponent() {
            return None;
        }
        if e >= format.min_exponent() {
            let drop = 23 - m;
            if sig & ((1 << drop) - 1) != 0 {
                return None;
            }
            (((e + format.bias()) as u32) << m) | ((sig >> drop) & ((1 << m) - 1))
        } else {
            // target subnormal: sig · 2^(e-23) in quanta of 2^(min_exp - m)
            let drop = (format.min_exponent() - m as i32) - (e - 23);
            if drop > 24 || sig & ((1 << drop) - 1) != 0 {
                return None;
            }
            sig >> drop
        }
    };
    Some((sign | code) as u16)
}

pub fn quantize(t: &Tensor, cfg: &QuantConfig) -> QuantizedTensor {
    quantize_as(t, FloatFormat::FP8, cfg).expect("FP8 is a code format")
}

/// Q node into `format` (FP8 or FP16). Stochastic rounding uses one LFSR
/// substream per [`STREAM_CHUNK`] elements.
pub fn quantize_as(t: &Tensor, format: FloatFormat, cfg: &QuantConfig) -> Result<QuantizedTensor, QuantError> {
    check_code_format(format)?;
    let mut codes = vec![0u16; t.len()];
    let (overflow_count, underflow_count) = codes
        .par_chunks_mut(STREAM_CHUNK)
        .zip(t.data().par_chunks(STREAM_CHUNK))
        .enumerate()
        .map(|(chunk, (out, src))| {
            let mut rng = (cfg.mode == RoundingMode::Stochastic).then(|| Lfsr::derive(cfg.seed, chunk as u64));
            let mut counts = (0usize, 0usize);
            for (o, &x) in out.iter_mut().zip(src) {
                let rounding = match (&mut rng, cfg.mode) {
                    (Some(r), _) => Rounding::Stochastic(r),
                    (None, RoundingMode::TowardZero) => Rounding::TowardZero,
                    (None, _) => Rounding::NearestEven,
                };
                let e = format.encode(f64::from(x), rounding);
                let mut bits = e.bits;
                if e.overflowed {
                    counts.0 += 1;
                    if cfg.saturate_on_overflow {
                        bits = (bits & format.sign_mask()) | format.max_finite_bits();
                    }
                }
                counts.1 += usize::from(e.underflowed);
                *o = bits as u16;
            }
            counts
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(QuantizedTensor {
        shape: t.shape().to_vec(),
        codes,
        format,
        mode: cfg.mode,
        overflow_count,
        underflow_count,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let table = q.table();
    Tensor {
        shape: q.shape.clone(),
        data: q.codes.iter().map(|&c| table[c as usize]).collect(),
    }
}
