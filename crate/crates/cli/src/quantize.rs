//! `quantize`: FP32 tensor file (binary or CSV) to an FP8 tensor file.

use std::fmt;
use std::path::Path;

use fp8emu::quant::io::{decode, encode_quantized, parse_csv_tensor, TensorFile, MAGIC};
use fp8emu::quant::{dequantize, quantize, QuantConfig, Tensor};
use fp8emu::RoundingMode;

use crate::{read_input, write_output, CliError, ConfigError};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeStats {
    pub elements: usize,
    pub overflow: usize,
    pub underflow: usize,
    /// Elements whose value survived exactly.
    pub exact: usize,
    /// Absolute rounding error over elements with a finite result.
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    /// Counts of finite-result errors per power-of-two bucket: exact, then
    /// `[2^k, 2^(k+1))` for ascending `k`, as `(k, count)`.
    pub histogram: Vec<(i32, usize)>,
}

impl fmt::Display for QuantizeStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "elements        {}", self.elements)?;
        writeln!(f, "overflow        {}", self.overflow)?;
        writeln!(f, "underflow       {}", self.underflow)?;
        writeln!(f, "exact           {}", self.exact)?;
        writeln!(f, "mean abs error  {:e}", self.mean_abs_error)?;
        writeln!(f, "max abs error   {:e}", self.max_abs_error)?;
        if !self.histogram.is_empty() {
            writeln!(f, "abs error histogram:")?;
            for (k, n) in &self.histogram {
                writeln!(f, "  [2^{k}, 2^{})  {n}", k + 1)?;
            }
        }
        Ok(())
    }
}

/// Read a tensor: FP8T files by magic, otherwise CSV text. Quantized
/// inputs are decoded to their values first.
pub fn read_tensor(path: &Path) -> Result<Tensor, CliError> {
    let bytes = read_input(path)?;
    let garbled = |e: fp8emu::quant::QuantError| CliError::Data(format!("{}: {e}", path.display()));
    if bytes.starts_with(MAGIC) {
        return Ok(match decode(&bytes).map_err(garbled)? {
            TensorFile::Float(t) => t,
            TensorFile::Quantized(q) => dequantize(&q),
        });
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Data(format!("{}: neither an FP8T file nor UTF-8 CSV", path.display())))?;
    parse_csv_tensor(&text).map_err(garbled)
}

pub fn quantize_file(input: &Path, output: &Path, mode: RoundingMode, seed: u64) -> Result<QuantizeStats, CliError> {
    let cfg = QuantConfig::new(mode, seed).map_err(|e| ConfigError::new(e.to_string()))?;
    let t = read_tensor(input)?;
    let q = quantize(&t, &cfg);
    let bytes = encode_quantized(&q).map_err(|e| CliError::Data(e.to_string()))?;
    write_output(output, bytes)?;
    let back = dequantize(&q);
    let (mut sum, mut max, mut finite, mut exact) = (0f64, 0f64, 0usize, 0usize);
    let mut buckets = std::collections::BTreeMap::new();
    for (&x, &y) in t.data().iter().zip(back.data()) {
        if !y.is_finite() {
            continue;
        }
        let err = (f64::from(x) - f64::from(y)).abs();
        finite += 1;
        sum += err;
        max = max.max(err);
        if err == 0.0 {
            exact += 1;
        } else {
            *buckets.entry(err.log2().floor() as i32).or_insert(0usize) += 1;
        }
    }
    Ok(QuantizeStats {
        elements: t.len(),
        overflow: q.overflow_count(),
        underflow: q.underflow_count(),
        exact,
        mean_abs_error: if finite == 0 { 0.0 } else { sum / finite as f64 },
        max_abs_error: max,
        histogram: buckets.into_iter().collect(),
    })
}
