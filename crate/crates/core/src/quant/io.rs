//! `FP8T` tensor container and the CSV tensor text format.
//!
//! Binary layout, all integers big-endian:
//!
//! | offset | size | field                                                     |
//! |--------|------|-----------------------------------------------------------|
//! | 0      | 4    | magic `b"FP8T"`                                           |
//! | 4      | 1    | version (`1`)                                             |
//! | 5      | 1    | rank                                                      |
//! | 6      | 1    | dtype: 1 = FP8 (1,5,2), 2 = FP16 (1,5,10), 3 = FP32       |
//! | 7      | 1    | rounding: 0 nearest-even, 1 stochastic, 2 toward-zero, 255 none |
//! | 8      | 4    | overflow count (u32)                                      |
//! | 12     | 4    | underflow count (u32)                                     |
//! | 16     | 4·rank | dimensions (u32 each)                                   |
//! | ...    | n·size | element payload: 1, 2 or 4 bytes per element            |
//!
//! The payload must end exactly at the end of the file.

use std::io::{Read, Write};

use crate::format::{FloatFormat, RoundingMode};

use super::tensor::{QuantizedTensor, Tensor};
use super::QuantError;

pub const MAGIC: &[u8; 4] = b"FP8T";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

const DTYPE_FP8: u8 = 1;
const DTYPE_FP16: u8 = 2;
const DTYPE_FP32: u8 = 3;
const MODE_NONE: u8 = 255;

/// Contents of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorFile {
    Quantized(QuantizedTensor),
    Float(Tensor),
}

fn mode_tag(mode: RoundingMode) -> u8 {
    match mode {
        RoundingMode::NearestEven => 0,
        RoundingMode::Stochastic => 1,
        RoundingMode::TowardZero => 2,
    }
}

fn header(rank: usize, dtype: u8, mode: u8, overflow: usize, underflow: usize) -> Result<Vec<u8>, QuantError> {
    let rank = u8::try_from(rank).map_err(|_| QuantError::Format("rank above 255".into()))?;
    let counter = |v: usize| u32::try_from(v).map_err(|_| QuantError::Format("counter above u32".into()));
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&[VERSION, rank, dtype, mode]);
    h.extend_from_slice(&counter(overflow)?.to_be_bytes());
    h.extend_from_slice(&counter(underflow)?.to_be_bytes());
    Ok(h)
}

fn dims(shape: &[usize]) -> Result<Vec<u8>, QuantError> {
    let mut out = Vec::with_capacity(shape.len() * 4);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| QuantError::Format(format!("dimension {d} above u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    Ok(out)
}

pub fn encode_quantized(q: &QuantizedTensor) -> Result<Vec<u8>, QuantError> {
    let dtype = if q.format() == FloatFormat::FP8 {
        DTYPE_FP8
    } else {
        DTYPE_FP16
    };
    let mut out = header(
        q.shape().len(),
        dtype,
        mode_tag(q.mode_used()),
        q.overflow_count(),
        q.underflow_count(),
    )?;
    out.extend(dims(q.shape())?);
    match dtype {
        DTYPE_FP8 => out.extend(q.codes().iter().map(|&c| c as u8)),
        _ => q.codes().iter().for_each(|c| out.extend_from_slice(&c.to_be_bytes())),
    }
    Ok(out)
}

pub fn encode_float(t: &Tensor) -> Result<Vec<u8>, QuantError> {
    let mut out = header(t.shape().len(), DTYPE_FP32, MODE_NONE, 0, 0)?;
    out.extend(dims(t.shape())?);
    for v in t.data() {
        out.extend_from_slice(&v.to_bits().to_be_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TensorFile, QuantError> {
    let bad = |msg: String| Err(QuantError::Format(msg));
    if bytes.len() < HEADER_LEN {
        return bad(format!("{} bytes is shorter than the 16-byte header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return bad(format!("bad magic {:02x?}, expected \"FP8T\"", &bytes[..4]));
    }
    if bytes[4] != VERSION {
        return bad(format!("unsupported version {}", bytes[4]));
    }
    let rank = bytes[5] as usize;
    let (dtype, mode) = (bytes[6], bytes[7]);
    let be32 = |b: &[u8]| u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
    let overflow = be32(&bytes[8..12]) as usize;
    let underflow = be32(&bytes[12..16]) as usize;
    let dims_end = HEADER_LEN + 4 * rank;
    if bytes.len() < dims_end {
        return bad(format!("truncated dimension list (rank {rank})"));
    }
    let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(4)
        .map(|c| be32(c) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| QuantError::Format("element count overflows".into()))?;
    let elem = match dtype {
        DTYPE_FP8 => 1,
        DTYPE_FP16 => 2,
        DTYPE_FP32 => 4,
        other => return bad(format!("unknown dtype tag {other}")),
    };
    let payload = &bytes[dims_end..];
    if Some(payload.len()) != count.checked_mul(elem) {
        return bad(format!(
            "payload is {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            count.saturating_mul(elem)
        ));
    }
    if dtype == DTYPE_FP32 {
        let data = payload.chunks_exact(4).map(|c| f32::from_bits(be32(c))).collect();
        return Ok(TensorFile::Float(Tensor::new(shape, data)?));
    }
    let mode = match mode {
        0 => RoundingMode::NearestEven,
        1 => RoundingMode::Stochastic,
        2 => RoundingMode::TowardZero,
        other => return bad(format!("unknown rounding tag {other}")),
    };
    let (format, codes) = if dtype == DTYPE_FP8 {
        (FloatFormat::FP8, payload.iter().map(|&b| u16::from(b)).collect())
    } else {
        (
            FloatFormat::FP16,
            payload
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
        )
    };
    let mut q = QuantizedTensor::from_codes(shape, codes, format, mode)?;
    q.overflow_count = overflow;
    q.underflow_count = underflow;
    Ok(TensorFile::Quantized(q))
}

pub fn write_quantized(mut w: impl Write, q: &QuantizedTensor) -> Result<(), QuantError> {
    w.write_all(&encode_quantized(q)?)?;
    Ok(())
}

pub fn write_float(mut w: impl Write, t: &Tensor) -> Result<(), QuantError> {
    w.write_all(&encode_float(t)?)?;
    Ok(())
}

pub fn read_tensor_file(mut r: impl Read) -> Result<TensorFile, QuantError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Parse the CSV tensor format: one row per line, comma separated `f32`
/// values, `#` starts a comment line, blank lines ignored. All rows must have
/// the same length; the result has shape `[rows, cols]`.
pub fn parse_csv_tensor(text: &str) -> Result<Tensor, QuantError> {
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f32>()
                    .map_err(|_| QuantError::Format(format!("line {}: `{}` is not a number", lineno + 1, f.trim())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(QuantError::Format(format!(
                    "line {}: {} values, expected {c}",
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| QuantError::Format("no data rows".into()))?;
    Tensor::new(vec![rows, cols], data)
}

pub fn to_csv(t: &Tensor) -> String {
    let cols = t.shape().last().copied().unwrap_or(1).max(1);
    let mut out = String::new();
    for row in t.data().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
