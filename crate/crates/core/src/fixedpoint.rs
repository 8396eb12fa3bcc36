//! Q8.8 two's-complement fixed-point arithmetic.
//!
//! Every datapath in the accelerator (chains, weight arrays, MAC engines,
//! aggregation units) carries 16-bit words with 8 integer and 8 fraction
//! bits. All narrowing operations round to nearest (ties to even) and
//! saturate; nothing wraps.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{Bounded, One, Zero};
use serde::{Deserialize, Serialize};

/// Number of fraction bits in a [`FixedQ8_8`] word.
pub const FRAC_BITS: u32 = 8;

/// Number of fraction bits carried by a [`WideAccumulator`].
pub const WIDE_FRAC_BITS: u32 = 2 * FRAC_BITS;

/// Bit width of a data word.
pub const WORD_BITS: usize = 16;

/// Divide `value` by `2^shift`, rounding to nearest with ties to even.
pub(crate) fn round_shift_even(value: i64, shift: u32) -> i64 {
    if shift == 0 {
        return value;
    }
    let quotient = value >> shift;
    let remainder = value - (quotient << shift);
    let half = 1i64 << (shift - 1);
    if remainder > half || (remainder == half && quotient & 1 == 1) {
        quotient + 1
    } else {
        quotient
    }
}

fn saturate_i16(value: i64) -> i16 {
    value.clamp(i16::MIN as i64, i16::MAX as i64) as i16
}

/// A 16-bit Q8.8 fixed-point number. The represented value is `raw / 256`.
#[derive(
    Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct FixedQ8_8(i16);

impl FixedQ8_8 {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1 << FRAC_BITS);
    pub const HALF: Self = Self(1 << (FRAC_BITS - 1));
    pub const MAX: Self = Self(i16::MAX);
    pub const MIN: Self = Self(i16::MIN);
    /// Smallest positive step, 2^-8.
    pub const EPSILON: Self = Self(1);

    #[inline]
    pub const fn from_raw(raw: i16) -> Self {
        Self(raw)
    }

    #[inline]
    pub const fn raw(self) -> i16 {
        self.0
    }

    /// Raw bit pattern as an unsigned word (two's complement).
    #[inline]
    pub const fn bits(self) -> u16 {
        self.0 as u16
    }

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Self(bits as i16)
    }

    /// Quantize a real number: round to the nearest multiple of 2^-8
    /// (ties to even), then saturate. NaN maps to zero.
    pub fn from_real(x: f64) -> Self {
        debug_assert!(!x.is_nan(), "from_real called with NaN");
        let scaled = (x * f64::from(1u32 << FRAC_BITS)).round_ties_even();
        if scaled.is_nan() {
            return Self::ZERO;
        }
        Self(scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16)
    }

    #[inline]
    pub fn to_real(self) -> f64 {
        f64::from(self.0) / f64::from(1u32 << FRAC_BITS)
    }

    #[inline]
    pub fn saturating_add(self, rhs: Self) -> Self {
        Self(self.0.saturating_add(rhs.0))
    }

    #[inline]
    pub fn saturating_sub(self, rhs: Self) -> Self {
        Self(self.0.saturating_sub(rhs.0))
    }

    /// Product rounded once at 2^-8 and saturated.
    #[inline]
    pub fn saturating_mul(self, rhs: Self) -> Self {
        let product = i64::from(self.0) * i64::from(rhs.0);
        Self(saturate_i16(round_shift_even(product, FRAC_BITS)))
    }

    /// Negation; `-MIN` saturates to `MAX`.
    #[inline]
    pub fn saturating_neg(self) -> Self {
        Self(self.0.saturating_neg())
    }

    /// Multiply by two with saturation (a one-position left shift).
    #[inline]
    pub fn double(self) -> Self {
        Self(saturate_i16(i64::from(self.0) << 1))
    }

    /// Arithmetic right shift by `n` positions (floor division by `2^n`).
    #[inline]
    #[allow(clippy::should_implement_trait)]
    pub fn shr(self, n: u32) -> Self {
        Self(self.0 >> n.min(15))
    }

    /// Integer part, truncated toward zero.
    #[inline]
    pub fn trunc_int(self) -> i32 {
        i32::from(self.0) / (1 << FRAC_BITS)
    }

    #[inline]
    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Value of bit `index` (0 = LSB, 15 = sign).
    #[inline]
    pub fn bit(self, index: usize) -> bool {
        debug_assert!(index < WORD_BITS);
        (self.bits() >> index) & 1 == 1
    }

    /// Replace the bits selected by `mask` with those of `other`.
    #[inline]
    pub fn splice_bits(self, other: Self, mask: u16) -> Self {
        Self::from_bits((self.bits() & !mask) | (other.bits() & mask))
    }
}

impl fmt::Debug for FixedQ8_8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q8.8({} = {:#06x})", self.to_real(), self.bits())
    }
}

impl fmt::Display for FixedQ8_8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_real(), f)
    }
}

impl Add for FixedQ8_8 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.saturating_add(rhs)
    }
}

impl Sub for FixedQ8_8 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.saturating_sub(rhs)
    }
}

impl Mul for FixedQ8_8 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.saturating_mul(rhs)
    }
}

impl Neg for FixedQ8_8 {
    type Output = Self;
    fn neg(self) -> Self {
        self.saturating_neg()
    }
}

impl Zero for FixedQ8_8 {
    fn zero() -> Self {
        Self::ZERO
    }
    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl One for FixedQ8_8 {
    fn one() -> Self {
        Self::ONE
    }
}

impl Bounded for FixedQ8_8 {
    fn min_value() -> Self {
        Self::MIN
    }
    fn max_value() -> Self {
        Self::MAX
    }
}

impl From<FixedQ8_8> for f64 {
    fn from(v: FixedQ8_8) -> f64 {
        v.to_real()
    }
}

/// Exact dot-product accumulator at 2^-16 resolution.
///
/// Products of two Q8.8 words are added without rounding; a single
/// round-and-saturate happens in [`WideAccumulator::narrow`]. The
/// backing store is 64 bits so that 2^16 worst-case products
/// (each at most 2^30 in magnitude) cannot overflow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WideAccumulator(i64);

impl WideAccumulator {
    pub const ZERO: Self = Self(0);

    #[inline]
    pub const fn from_raw(raw: i64) -> Self {
        Self(raw)
    }

    #[inline]
    pub const fn raw(self) -> i64 {
        self.0
    }

    /// Widen a Q8.8 value (used for biases and partial narrow results).
    #[inline]
    pub fn from_fixed(v: FixedQ8_8) -> Self {
        Self(i64::from(v.raw()) << FRAC_BITS)
    }

    /// `self + a * b`, exact.
    #[inline]
    #[must_use]
    pub fn mac(self, a: FixedQ8_8, b: FixedQ8_8) -> Self {
        Self(self.0 + i64::from(a.raw()) * i64::from(b.raw()))
    }

    /// Add an already-formed wide product (may be perturbed by fault logic).
    #[inline]
    #[must_use]
    pub fn add_raw(self, product: i64) -> Self {
        Self(self.0 + product)
    }

    #[inline]
    #[must_use]
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Self) -> Self {
        Self(self.0 + other.0)
    }

    /// Round once to Q8.8 and saturate.
    #[inline]
    pub fn narrow(self) -> FixedQ8_8 {
        FixedQ8_8(saturate_i16(round_shift_even(self.0, FRAC_BITS)))
    }

    pub fn to_real(self) -> f64 {
        self.0 as f64 / f64::from(1u32 << WIDE_FRAC_BITS)
    }
}

/// Accumulate `acc + a*b`. Free-function form of [`WideAccumulator::mac`].
#[inline]
pub fn mac_accumulate(acc: WideAccumulator, a: FixedQ8_8, b: FixedQ8_8) -> WideAccumulator {
    acc.mac(a, b)
}

/// Dot product over paired slices with one terminal rounding.
pub fn dot(a: &[FixedQ8_8], b: &[FixedQ8_8]) -> WideAccumulator {
    a.iter()
        .zip(b)
        .fold(WideAccumulator::ZERO, |acc, (&x, &y)| acc.mac(x, y))
}

/// Little-endian raw Q8.8 encoding (no header).
pub fn encode_le(values: &[FixedQ8_8]) -> Vec<u8> {
    values.iter().flat_map(|v| v.raw().to_le_bytes()).collect()
}

/// Decode little-endian raw Q8.8 words. Returns `None` on odd length.
pub fn decode_le(bytes: &[u8]) -> Option<Vec<FixedQ8_8>> {
    if !bytes.len().is_multiple_of(2) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(2)
            .map(|c| FixedQ8_8::from_raw(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
    )
}
