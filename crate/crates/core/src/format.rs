//! Parametric IEEE-style minifloat formats with bit-exact encode/decode.
//!
//! All conversion arithmetic happens in `f64`, which is strictly wider than
//! every supported target (FP8 1-5-2, FP16 1-5-10, FP32 1-8-23), so the
//! residual that drives each rounding decision is computed exactly.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

use crate::lfsr::Lfsr;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("unsupported width {0}: 1 + exponent + mantissa bits must be 8, 16 or 32")]
    UnsupportedWidth(u32),
    #[error("exponent field needs at least 2 bits, got {0}")]
    ExponentTooNarrow(u32),
    #[error("unknown rounding mode `{0}` (expected nearest-even, stochastic or toward-zero)")]
    UnknownRounding(String),
}

/// Sign/exponent/mantissa layout of a binary floating-point format.
///
/// The all-ones exponent field is reserved for Inf/NaN, so the largest
/// finite value uses exponent field `2^e - 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloatFormat {
    exponent_bits: u32,
    mantissa_bits: u32,
}

/// Largest finite value and the smallest normal/subnormal magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicRange {
    pub max_normal: f64,
    pub min_normal: f64,
    pub min_subnormal: f64,
}

/// Result of converting a real into a format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoded {
    pub bits: u32,
    /// |x| exceeded the largest finite value (including x = ±Inf).
    pub overflowed: bool,
    /// x was nonzero but rounded to a zero magnitude.
    pub underflowed: bool,
}

/// Rounding mode as configured (no RNG attached).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RoundingMode {
    #[default]
    NearestEven,
    Stochastic,
    /// Truncation toward zero. Used as the floor inside stochastic rounding
    /// and as a test oracle; not meant for training.
    TowardZero,
}

impl RoundingMode {
    pub const fn as_str(self) -> &'static str {
        match self {
            RoundingMode::NearestEven => "nearest-even",
            RoundingMode::Stochastic => "stochastic",
            RoundingMode::TowardZero => "toward-zero",
        }
    }
}

impl fmt::Display for RoundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoundingMode {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest-even" | "rne" | "nearest" => Ok(RoundingMode::NearestEven),
            "stochastic" | "sr" => Ok(RoundingMode::Stochastic),
            "toward-zero" | "truncate" | "rtz" => Ok(RoundingMode::TowardZero),
            _ => Err(FormatError::UnknownRounding(s.to_string())),
        }
    }
}

/// Rounding mode bound to its random source. Stochastic rounding cannot be
/// requested without a stream.
#[derive(Debug)]
pub enum Rounding<'a> {
    NearestEven,
    TowardZero,
    Stochastic(&'a mut Lfsr),
}

impl Rounding<'_> {
    pub fn mode(&self) -> RoundingMode {
        match self {
            Rounding::NearestEven => RoundingMode::NearestEven,
            Rounding::TowardZero => RoundingMode::TowardZero,
            Rounding::Stochastic(_) => RoundingMode::Stochastic,
        }
    }
}

/// 2^e as an f64; exact for every exponent any supported format produces.
#[inline]
pub(crate) fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// floor(log2(a)) for finite a > 0, including f64 subnormals.
#[inline]
fn floor_log2(a: f64) -> i32 {
    let bits = a.to_bits();
    let field = ((bits >> 52) & 0x7ff) as i32;
    if field == 0 {
        let mant = bits & ((1u64 << 52) - 1);
        63 - mant.leading_zeros() as i32 - 1074
    } else {
        field - 1023
    }
}

impl FloatFormat {
    pub const FP8: Self = Self {
        exponent_bits: 5,
        mantissa_bits: 2,
    };
    pub const FP16: Self = Self {
        exponent_bits: 5,
        mantissa_bits: 10,
    };
    pub const FP32: Self = Self {
        exponent_bits: 8,
        mantissa_bits: 23,
    };

    pub fn new(exponent_bits: u32, mantissa_bits: u32) -> Result<Self, FormatError> {
        let width = 1 + exponent_bits + mantissa_bits;
        if !matches!(width, 8 | 16 | 32) {
            return Err(FormatError::UnsupportedWidth(width));
        }
        if exponent_bits < 2 {
            return Err(FormatError::ExponentTooNarrow(exponent_bits));
        }
        Ok(Self {
            exponent_bits,
            mantissa_bits,
        })
    }

    pub const fn exponent_bits(self) -> u32 {
        self.exponent_bits
    }

    pub const fn mantissa_bits(self) -> u32 {
        self.mantissa_bits
    }

    pub const fn width(self) -> u32 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    pub const fn bias(self) -> i32 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    const fn exponent_field_max(self) -> u32 {
        (1 << self.exponent_bits) - 1
    }

    const fn mantissa_mask(self) -> u32 {
        (1 << self.mantissa_bits) - 1
    }

    /// Unbiased exponent of the smallest normal.
    pub const fn min_exponent(self) -> i32 {
        1 - self.bias()
    }

    /// Unbiased exponent of the largest finite value.
    pub const fn max_exponent(self) -> i32 {
        self.exponent_field_max() as i32 - 1 - self.bias()
    }

    pub const fn sign_mask(self) -> u32 {
        1 << (self.exponent_bits + self.mantissa_bits)
    }

    pub const fn infinity_bits(self) -> u32 {
        self.exponent_field_max() << self.mantissa_bits
    }

    /// Canonical quiet NaN (top mantissa bit set).
    pub const fn nan_bits(self) -> u32 {
        self.infinity_bits() | (1 << (self.mantissa_bits - 1))
    }

    pub const fn max_finite_bits(self) -> u32 {
        self.infinity_bits() - 1
    }

    /// Number of distinct bit patterns.
    pub const fn code_count(self) -> u64 {
        1u64 << self.width()
    }

    pub fn name(self) -> String {
        match self {
            Self::FP8 => "FP8".into(),
            Self::FP16 => "FP16".into(),
            Self::FP32 => "FP32".into(),
            _ => format!("E{}M{}", self.exponent_bits, self.mantissa_bits),
        }
    }

    pub fn dynamic_range(self) -> DynamicRange {
        let m = self.mantissa_bits as i32;
        DynamicRange {
            max_normal: (2.0 - pow2(-m)) * pow2(self.max_exponent()),
            min_normal: pow2(self.min_exponent()),
            min_subnormal: pow2(self.min_exponent() - m),
        }
    }

    #[inline]
    pub fn max_normal(self) -> f64 {
        (2.0 - pow2(-(self.mantissa_bits as i32))) * pow2(self.max_exponent())
    }

    /// Exact value of a bit pattern. Bits above the format width are ignored.
    pub fn decode(self, bits: u32) -> f64 {
        let m = self.mantissa_bits;
        let exp = (bits >> m) & self.exponent_field_max();
        let mant = bits & self.mantissa_mask();
        let mag = if exp == self.exponent_field_max() {
            if mant == 0 {
                f64::INFINITY
            } else {
                // payload goes to the top of the f64 mantissa
                f64::from_bits(0x7ff0_0000_0000_0000 | u64::from(mant) << (52 - m))
            }
        } else if exp == 0 {
            f64::from(mant) * pow2(self.min_exponent() - m as i32)
        } else {
            f64::from(mant | (1 << m)) * pow2(exp as i32 - self.bias() - m as i32)
        };
        if bits & self.sign_mask() != 0 {
            -mag
        } else {
            mag
        }
    }

    /// Spacing between adjacent representable magnitudes at |x|. Powers of two
    /// take the spacing above them; the subnormal range yields the minimum
    /// subnormal.
    pub fn ulp(self, x: f64) -> f64 {
        let a = x.abs();
        let m = self.mantissa_bits as i32;
        if a == 0.0 || !a.is_finite() {
            return pow2(self.min_exponent() - m);
        }
        pow2(floor_log2(a).max(self.min_exponent()) - m)
    }

    /// Convert `x` into this format.
    ///
    /// Stochastic rounding draws exactly one sample per call (whatever the
    /// input) so stream positions depend only on call order. Magnitudes
    /// strictly above the largest finite value become ±Inf with
    /// `overflowed` set.
    pub fn encode(self, x: f64, rounding: Rounding<'_>) -> Encoded {
        let mode = rounding.mode();
        let r = match rounding {
            Rounding::Stochastic(rng) => rng.next_fraction(),
            _ => 0.0,
        };
        let sign = if x.is_sign_negative() { self.sign_mask() } else { 0 };
        if x.is_nan() {
            // keep the top payload bits; fall back to the quiet NaN if none survive
            let payload = (x.to_bits() >> (52 - self.mantissa_bits)) as u32 & self.mantissa_mask();
            let nan = if payload == 0 {
                self.nan_bits()
            } else {
                self.infinity_bits() | payload
            };
            return Encoded {
                bits: sign | nan,
                overflowed: false,
                underflowed: false,
            };
        }
        let a = x.abs();
        if a > self.max_normal() {
            return Encoded {
                bits: sign | self.infinity_bits(),
                overflowed: true,
                underflowed: false,
            };
        }
        if a == 0.0 {
            return Encoded {
                bits: sign,
                overflowed: false,
                underflowed: false,
            };
        }

        let m = self.mantissa_bits;
        let exp = floor_log2(a).max(self.min_exponent());
        // Power-of-two division: exact.
        let scaled = a / pow2(exp - m as i32);
        let floor = scaled.floor();
        let frac = scaled - floor;
        let mut steps = floor as u64;
        let round_up = match mode {
            RoundingMode::NearestEven => frac > 0.5 || (frac == 0.5 && steps & 1 == 1),
            RoundingMode::TowardZero => false,
            // floor + ulp with probability exactly frac (r ∈ [0, 1) in ulps).
            RoundingMode::Stochastic => frac >= 1.0 - r,
        };
        steps += u64::from(round_up);

        let magnitude_bits = if steps == 0 {
            0
        } else {
            let mut field = (exp + self.bias()) as u64;
            if steps == 1 << (m + 1) {
                steps >>= 1;
                field += 1;
            }
            if steps < 1 << m {
                // subnormal: only reachable at the minimum exponent
                steps
            } else {
                (field << m) | (steps - (1 << m))
            }
        } as u32;
        debug_assert!(magnitude_bits < self.infinity_bits());

        Encoded {
            bits: sign | magnitude_bits,
            overflowed: false,
            underflowed: magnitude_bits == 0,
        }
    }

    /// Nearest representable value, ties to even mantissa.
    pub fn round_nearest_even(self, x: f64) -> f64 {
        self.decode(self.encode(x, Rounding::NearestEven).bits)
    }

    pub fn round_toward_zero(self, x: f64) -> f64 {
        self.decode(self.encode(x, Rounding::TowardZero).bits)
    }

    /// Unbiased stochastic rounding: `floor_k(x) + ulp` with probability
    /// `(x - floor_k(x)) / ulp`, otherwise `floor_k(x)`.
    pub fn stochastic_round(self, x: f64, rng: &mut Lfsr) -> f64 {
        self.decode(self.encode(x, Rounding::Stochastic(rng)).bits)
    }

    /// Whether `x` is exactly a finite value of this format.
    pub fn is_representable(self, x: f64) -> bool {
        x.is_finite() && self.round_toward_zero(x) == x && x.abs() <= self.max_normal()
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (1, {}, {})", self.name(), self.exponent_bits, self.mantissa_bits)
    }
}

/// Raw FP8 (1-5-2) bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp8Code(pub u8);

/// Raw FP16 (1-5-10) bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp16Code(pub u16);

fn fp8_table() -> &'static [f32; 256] {
    static TABLE: OnceLock<[f32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|i| FloatFormat::FP8.decode(i as u32) as f32))
}

fn fp16_table() -> &'static [f32] {
    static TABLE: OnceLock<Vec<f32>> = OnceLock::new();
    TABLE.get_or_init(|| (0..1u32 << 16).map(|i| FloatFormat::FP16.decode(i) as f32).collect())
}

/// Decode lookup for the 8- and 16-bit formats used by tensors and kernels.
/// Every FP8 and FP16 value is exactly representable in `f32`.
pub fn decode_table(format: FloatFormat) -> Option<&'static [f32]> {
    match format {
        FloatFormat::FP8 => Some(fp8_table()),
        FloatFormat::FP16 => Some(fp16_table()),
        _ => None,
    }
}

impl Fp8Code {
    pub const FORMAT: FloatFormat = FloatFormat::FP8;

    pub fn encode(x: f64, rounding: Rounding<'_>) -> (Self, Encoded) {
        let e = Self::FORMAT.encode(x, rounding);
        (Self(e.bits as u8), e)
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        fp8_table()[self.0 as usize]
    }

    pub fn to_f64(self) -> f64 {
        Self::FORMAT.decode(u32::from(self.0))
    }

    pub fn sign(self) -> bool {
        self.0 & 0x80 != 0
    }

    pub fn exponent_field(self) -> u8 {
        (self.0 >> 2) & 0x1f
    }

    pub fn mantissa_field(self) -> u8 {
        self.0 & 0x3
    }

    pub fn is_nan(self) -> bool {
        self.exponent_field() == 0x1f && self.mantissa_field() != 0
    }

    pub fn is_infinite(self) -> bool {
        self.exponent_field() == 0x1f && self.mantissa_field() == 0
    }
}

impl Fp16Code {
    pub const FORMAT: FloatFormat = FloatFormat::FP16;

    pub fn encode(x: f64, rounding: Rounding<'_>) -> (Self, Encoded) {
        let e = Self::FORMAT.encode(x, rounding);
        (Self(e.bits as u16), e)
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        fp16_table()[self.0 as usize]
    }

    pub fn to_f64(self) -> f64 {
        Self::FORMAT.decode(u32::from(self.0))
    }
}

/// Truncate (not round) to three significant digits, e.g. `1.17e-38`.
fn sci3_truncated(v: f64) -> String {
    let s = format!("{v:.15e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    format!("{}e{}", &mantissa[..4], exp)
}

fn range_cell(v: f64) -> String {
    if v.fract() == 0.0 && v < 1e6 {
        format!("{v:.0}")
    } else {
        sci3_truncated(v)
    }
}

/// Dynamic-range table for FP32, FP16 and FP8. Integral values below 10^6
/// print exactly; everything else is truncated to three significant digits.
pub fn range_report() -> String {
    let rows = [
        ("IEEE-754 float", FloatFormat::FP32),
        ("IEEE-754 half-float", FloatFormat::FP16),
        ("FP8", FloatFormat::FP8),
    ];
    let mut out = format!(
        "{:<22}{:<22}{:<14}{:<14}{:<14}\n",
        "Data Type", "Bit Format (s, e, m)", "Max Normal", "Min Normal", "Min Subnormal"
    );
    for (name, fmt) in rows {
        let r = fmt.dynamic_range();
        let bits = format!("1, {}, {}", fmt.exponent_bits(), fmt.mantissa_bits());
        out.push_str(&format!(
            "{:<22}{:<22}{:<14}{:<14}{:<14}\n",
            name,
            bits,
            range_cell(r.max_normal),
            range_cell(r.min_normal),
            range_cell(r.min_subnormal)
        ));
    }
    out
}

#[cfg(test)]
#[allow(clippy::unusual_byte_groupings)]
mod tests {
    use super::*;

    const FP8: FloatFormat = FloatFormat::FP8;

    /// Closed-form decode written independently of `FloatFormat::decode`.
    fn fp8_formula(code: u8) -> f64 {
        let s = if code & 0x80 != 0 { -1.0 } else { 1.0 };
        let e = i32::from((code >> 2) & 0x1f);
        let m = f64::from(code & 3);
        match e {
            31 if m == 0.0 => s * f64::INFINITY,
            31 => f64::NAN,
            0 => s * (m / 4.0) * 2f64.powi(-14),
            _ => s * (1.0 + m / 4.0) * 2f64.powi(e - 15),
        }
    }

    /// Exhaustive nearest-code search with ties to the even mantissa.
    fn nearest_code_oracle(x: f64) -> u8 {
        let mut best: Option<(u8, f64)> = None;
        for c in 0..=255u8 {
            let v = fp8_formula(c);
            if !v.is_finite() || (v == 0.0 && c != 0) {
                continue;
            }
            let d = (x - v).abs();
            best = match best {
                None => Some((c, d)),
                Some((bc, bd)) if d < bd || (d == bd && c & 1 == 0 && bc & 1 == 1) => Some((c, d)),
                keep => keep,
            };
        }
        best.unwrap().0
    }

    #[test]
    fn format_invariants() {
        assert_eq!(FP8.bias(), 15);
        assert_eq!(FloatFormat::FP16.bias(), 15);
        assert_eq!(FloatFormat::FP32.bias(), 127);
        assert_eq!(FP8.width(), 8);
        assert_eq!(FP8.max_finite_bits(), 0b0_11110_11);
        assert_eq!(FloatFormat::new(5, 2).unwrap(), FP8);
        assert_eq!(FloatFormat::new(5, 3), Err(FormatError::UnsupportedWidth(9)));
        assert_eq!(FloatFormat::new(1, 6), Err(FormatError::ExponentTooNarrow(1)));
    }

    #[test]
    fn decode_matches_formula_for_every_code() {
        for c in 0..=255u8 {
            let got = FP8.decode(u32::from(c));
            let want = fp8_formula(c);
            if want.is_nan() {
                assert!(got.is_nan());
            } else {
                assert_eq!(got, want, "code {c:#010b}");
            }
            assert_eq!(Fp8Code(c).to_f32() as f64 == got, !got.is_nan());
        }
        assert_eq!(FP8.decode(0b0_00000_00), 0.0);
        assert_eq!(FP8.decode(0b0_11110_11), 57344.0);
        assert_eq!(FP8.decode(0b0_00000_01), 2f64.powi(-16));
        assert_eq!(FP8.decode(0b0_01111_00), 1.0);
        let neg_zero = FP8.decode(0b1_00000_00);
        assert!(neg_zero == 0.0 && neg_zero.is_sign_negative());
        assert_eq!(FP8.decode(0b0_11111_00), f64::INFINITY);
        assert!(FP8.decode(0b0_11111_01).is_nan());
    }

    #[test]
    fn encode_examples() {
        let e = FP8.encode(0.0, Rounding::NearestEven);
        assert_eq!(
            e,
            Encoded {
                bits: 0,
                overflowed: false,
                underflowed: false
            }
        );
        let e = FP8.encode(1e6, Rounding::NearestEven);
        assert_eq!(e.bits, FP8.infinity_bits());
        assert!(e.overflowed);
        let e = FP8.encode(-1e6, Rounding::NearestEven);
        assert_eq!(e.bits, FP8.sign_mask() | FP8.infinity_bits());
        assert_eq!(FP8.round_nearest_even(1.1), 1.0);
        assert_eq!(FP8.round_nearest_even(1.125), 1.0);
        assert_eq!(FP8.round_nearest_even(1.375), 1.5);
        assert_eq!(
            nearest_code_oracle(1.1),
            FP8.encode(1.1, Rounding::NearestEven).bits as u8
        );
        assert_eq!(
            nearest_code_oracle(1.375),
            FP8.encode(1.375, Rounding::NearestEven).bits as u8
        );
        let nan = FP8.encode(f64::NAN, Rounding::NearestEven);
        assert_eq!(nan.bits, FP8.nan_bits());
        // payload only in bits the format cannot hold
        assert_eq!(
            FP8.encode(f64::from_bits(0x7ff0_0000_0000_0001), Rounding::NearestEven)
                .bits,
            FP8.nan_bits()
        );
    }

    #[test]
    fn every_code_round_trips_in_every_mode() {
        let mut rng = Lfsr::new(0xace1).unwrap();
        for fmt in [FP8, FloatFormat::FP16] {
            for c in 0..fmt.code_count() as u32 {
                let v = fmt.decode(c);
                assert_eq!(fmt.encode(v, Rounding::NearestEven).bits, c);
                assert_eq!(fmt.encode(v, Rounding::TowardZero).bits, c);
                assert_eq!(fmt.encode(v, Rounding::Stochastic(&mut rng)).bits, c);
            }
        }
    }

    #[test]
    fn overflow_boundary_is_max_normal() {
        let max = FP8.max_normal();
        assert!(!FP8.encode(max, Rounding::NearestEven).overflowed);
        assert!(FP8.encode(max + 1.0, Rounding::NearestEven).overflowed);
        assert!(FP8.encode(f64::INFINITY, Rounding::TowardZero).overflowed);
    }

    #[test]
    fn underflow_flag() {
        let tiny = 2f64.powi(-18);
        let e = FP8.encode(tiny, Rounding::NearestEven);
        assert_eq!(e.bits, 0);
        assert!(e.underflowed);
        let e = FP8.encode(-tiny, Rounding::NearestEven);
        assert_eq!(e.bits, FP8.sign_mask());
        assert!(e.underflowed);
        // just above half the min subnormal rounds up to it
        let e = FP8.encode(2f64.powi(-17) * 1.01, Rounding::NearestEven);
        assert_eq!(e.bits, 1);
        assert!(!e.underflowed);
    }

    #[test]
    fn ulp_examples() {
        assert_eq!(FP8.ulp(1.0), 0.25);
        assert_eq!(FP8.ulp(0.0), 2f64.powi(-16));
        assert_eq!(FP8.ulp(32768.0), 8192.0);
        assert_eq!(FP8.ulp(1e-6), 2f64.powi(-16));
        assert_eq!(FloatFormat::FP16.ulp(1.0), 2f64.powi(-10));
    }

    #[test]
    fn dynamic_ranges() {
        let r = FP8.dynamic_range();
        assert_eq!(r.max_normal, 57344.0);
        assert_eq!(r.min_normal, 2f64.powi(-14));
        assert_eq!(r.min_subnormal, 2f64.powi(-16));
        let r = FloatFormat::FP16.dynamic_range();
        assert_eq!(r.max_normal, 65504.0);
        assert_eq!(r.min_subnormal, 2f64.powi(-24));
        let r = FloatFormat::FP32.dynamic_range();
        assert_eq!(r.max_normal, f64::from(f32::MAX));
        assert_eq!(r.min_normal, f64::from(f32::MIN_POSITIVE));
        assert_eq!(r.min_subnormal, 2f64.powi(-149));
    }

    #[test]
    fn fp16_and_fp32_agree_with_std() {
        for x in [1.0f32, 3.3, -2.5e-6, 65504.0, 1e-8, 6.1e-5] {
            assert_eq!(
                FloatFormat::FP32.encode(f64::from(x), Rounding::NearestEven).bits,
                x.to_bits()
            );
        }
        // FP16 decode of a few known patterns
        assert_eq!(Fp16Code(0x3c00).to_f64(), 1.0);
        assert_eq!(Fp16Code(0x7bff).to_f64(), 65504.0);
        assert_eq!(Fp16Code(0x0001).to_f64(), 2f64.powi(-24));
        assert_eq!(Fp16Code::encode(0.1, Rounding::NearestEven).0, Fp16Code(0x2e66));
    }

    #[test]
    fn stochastic_round_representable_is_fixed() {
        let mut rng = Lfsr::new(0x1d).unwrap();
        for c in 0..0x7bu8 {
            let v = FP8.decode(u32::from(c));
            assert_eq!(FP8.stochastic_round(v, &mut rng), v);
        }
    }

    #[test]
    fn stochastic_tie_frequency() {
        // 1.125 sits halfway between 1.0 and 1.25.
        let mut rng = Lfsr::derive(5, 0);
        let n = 100_000;
        let ups = (0..n).filter(|_| FP8.stochastic_round(1.125, &mut rng) == 1.25).count();
        let p = ups as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((p - 0.5).abs() <= 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn stochastic_mean_of_1_1() {
        let mut rng = Lfsr::derive(11, 3);
        let n = 1_000_000;
        let mean = (0..n).map(|_| FP8.stochastic_round(1.1, &mut rng)).sum::<f64>() / n as f64;
        let bound = 3.0 * (0.25 / 2.0) / (n as f64).sqrt();
        assert!((mean - 1.1).abs() <= bound, "mean {mean}");
    }

    #[test]
    fn range_report_layout() {
        let text = range_report();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("3.40e38") && lines[1].contains("1.17e-38") && lines[1].contains("1.40e-45"));
        assert!(lines[2].contains("65504") && lines[2].contains("6.10e-5") && lines[2].contains("5.96e-8"));
        assert!(lines[3].contains("57344") && lines[3].contains("6.10e-5") && lines[3].contains("1.52e-5"));
    }

    #[test]
    fn rounding_mode_parse() {
        assert_eq!("stochastic".parse::<RoundingMode>().unwrap(), RoundingMode::Stochastic);
        assert_eq!("RNE".parse::<RoundingMode>().unwrap(), RoundingMode::NearestEven);
        assert!("up".parse::<RoundingMode>().is_err());
        assert_eq!(RoundingMode::TowardZero.to_string(), "toward-zero");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn finite_in_range() -> impl Strategy<Value = f64> {
            prop_oneof![
                -57344.0f64..57344.0,
                (-20i32..16, 1.0f64..2.0, any::<bool>())
                    .prop_map(|(e, m, neg)| if neg { -m * 2f64.powi(e) } else { m * 2f64.powi(e) })
                    .prop_filter("finite range", |x| x.abs() <= 57344.0),
            ]
        }

        proptest! {
            #[test]
            fn rne_matches_oracle(x in finite_in_range()) {
                let got = FP8.encode(x, Rounding::NearestEven).bits as u8;
                let want = nearest_code_oracle(x);
                prop_assert_eq!(FP8.decode(u32::from(got)), FP8.decode(u32::from(want)));
            }

            #[test]
            fn rne_error_bound(x in finite_in_range()) {
                let r = FP8.round_nearest_even(x);
                prop_assert!((r - x).abs() <= FP8.ulp(x) / 2.0);
            }

            #[test]
            fn rne_monotone(a in finite_in_range(), b in finite_in_range()) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(FP8.round_nearest_even(lo) <= FP8.round_nearest_even(hi));
            }

            #[test]
            fn sign_symmetry(x in finite_in_range(), seed in 1u64..u64::MAX) {
                let mut r1 = Lfsr::derive(seed, 0);
                let mut r2 = r1.clone();
                let pos = FP8.encode(x, Rounding::Stochastic(&mut r1)).bits;
                let neg = FP8.encode(-x, Rounding::Stochastic(&mut r2)).bits;
                prop_assert_eq!(pos ^ FP8.sign_mask(), neg);
                prop_assert_eq!(
                    FP8.encode(x, Rounding::NearestEven).bits ^ FP8.sign_mask(),
                    FP8.encode(-x, Rounding::NearestEven).bits
                );
            }

            #[test]
            fn stochastic_support(x in finite_in_range(), seed in 1u64..u64::MAX) {
                let mut rng = Lfsr::derive(seed, 1);
                let lo = FP8.round_toward_zero(x);
                let r = FP8.stochastic_round(x, &mut rng);
                let step = FP8.ulp(x).copysign(x);
                prop_assert!(r == lo || r == lo + step, "x={} r={} lo={}", x, r, lo);
            }
        }
    }
}
