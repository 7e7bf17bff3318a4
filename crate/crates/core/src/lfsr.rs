//! Fibonacci linear-feedback shift registers used as the random source for
//! stochastic rounding and seed derivation helpers.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LfsrError {
    #[error("LFSR seed must be nonzero after masking to {0} bits")]
    ZeroSeed(u32),
    #[error("sample width {sample} must be in 1..={register}")]
    SampleWidth { sample: u32, register: u32 },
}

/// Register sizes with a known maximal-length tap set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LfsrWidth {
    /// x^8 + x^6 + x^5 + x^4 + 1
    Bits8,
    /// x^16 + x^14 + x^13 + x^11 + 1
    Bits16,
}

impl LfsrWidth {
    pub const fn bits(self) -> u32 {
        match self {
            LfsrWidth::Bits8 => 8,
            LfsrWidth::Bits16 => 16,
        }
    }

    /// Shift distances (register width minus tap position) feeding the XOR.
    const fn shifts(self) -> &'static [u32] {
        match self {
            LfsrWidth::Bits8 => &[0, 2, 3, 4],
            LfsrWidth::Bits16 => &[0, 2, 3, 5],
        }
    }

    const fn mask(self) -> u32 {
        (1u32 << self.bits()) - 1
    }
}

/// A Fibonacci LFSR that emits `sample_bits`-wide samples.
///
/// Each sample shifts the register `sample_bits` times and collects the bits
/// that fall out of the low end, least significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lfsr {
    state: u32,
    width: LfsrWidth,
    sample_bits: u32,
}

impl Lfsr {
    /// 16-bit register drawing 16 bits per sample.
    pub fn new(seed: u32) -> Result<Self, LfsrError> {
        Self::with_config(LfsrWidth::Bits16, seed, 16)
    }

    pub fn with_config(width: LfsrWidth, seed: u32, sample_bits: u32) -> Result<Self, LfsrError> {
        if sample_bits == 0 || sample_bits > width.bits() {
            return Err(LfsrError::SampleWidth {
                sample: sample_bits,
                register: width.bits(),
            });
        }
        let state = seed & width.mask();
        if state == 0 {
            return Err(LfsrError::ZeroSeed(width.bits()));
        }
        Ok(Self {
            state,
            width,
            sample_bits,
        })
    }

    /// Independent stream `stream` derived from a 64-bit seed. Never fails:
    /// the derived register value is mapped into the nonzero range.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Self::derive_with(LfsrWidth::Bits16, 16, seed, stream)
    }

    pub fn derive_with(width: LfsrWidth, sample_bits: u32, seed: u64, stream: u64) -> Self {
        let sample_bits = sample_bits.clamp(1, width.bits());
        let h = derive_seed(seed, &[stream]);
        let nonzero = (h % u64::from(width.mask())) as u32 + 1;
        Self {
            state: nonzero,
            width,
            sample_bits,
        }
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    pub fn width(&self) -> LfsrWidth {
        self.width
    }

    pub fn sample_bits(&self) -> u32 {
        self.sample_bits
    }

    /// Advance one step and return the bit shifted out.
    #[inline]
    pub fn shift(&mut self) -> u32 {
        let s = self.state;
        let feedback = self.width.shifts().iter().fold(0, |acc, &k| acc ^ (s >> k)) & 1;
        let out = s & 1;
        self.state = (s >> 1) | (feedback << (self.width.bits() - 1));
        out
    }

    /// Advance `k` steps at once and return the `k` bits shifted out,
    /// first bit in the LSB. Valid while `k` does not exceed the register
    /// width minus the largest tap offset, so every feedback bit depends only
    /// on the current state.
    #[inline]
    fn advance(&mut self, k: u32) -> u32 {
        let s = self.state;
        let mask = (1u32 << k) - 1;
        let feedback = self.width.shifts().iter().fold(0, |acc, &t| acc ^ (s >> t)) & mask;
        self.state = (s >> k) | (feedback << (self.width.bits() - k));
        s & mask
    }

    #[inline]
    pub fn next_bits(&mut self) -> u32 {
        let chunk = self.width.bits() - self.width.shifts().iter().max().copied().unwrap_or(0);
        let mut r = 0;
        let mut done = 0;
        while done < self.sample_bits {
            let k = chunk.min(self.sample_bits - done);
            r |= self.advance(k) << done;
            done += k;
        }
        r
    }

    /// Next sample as a fraction in `[0, 1)`.
    #[inline]
    pub fn next_fraction(&mut self) -> f64 {
        f64::from(self.next_bits()) / f64::from(1u32 << self.sample_bits)
    }

    /// Number of single-bit steps until the register returns to its current
    /// state.
    pub fn period(&self) -> u64 {
        let mut probe = self.clone();
        let start = probe.state;
        let mut n = 0u64;
        loop {
            probe.shift();
            n += 1;
            if probe.state == start {
                return n;
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a path of indices (step, node, chunk, ...) into a new
/// 64-bit seed. Distinct paths give unrelated seeds.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
