//! Sigmoid and tanh units.
//!
//! Two hardware variants are modeled: the shift-based approximation
//! (a piecewise-linear sigmoid evaluated with right shifts on a 16-bit
//! racetrack) and a 64-entry lookup table over `[-4, 4]`. Exact
//! floating-point versions serve as accuracy references.

use std::sync::OnceLock;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::fixedpoint::{FixedQ8_8, FRAC_BITS};

/// Number of LUT samples.
pub const LUT_SAMPLES: usize = 64;
/// LUT input domain is `[-LUT_RANGE, LUT_RANGE]`.
pub const LUT_RANGE: f64 = 4.0;

const ONE_RAW: i32 = 1 << FRAC_BITS;
const LUT_LOW_RAW: i32 = -(LUT_RANGE as i32) * ONE_RAW;
const LUT_HIGH_RAW: i32 = (LUT_RANGE as i32) * ONE_RAW;
/// log2 of the raw width of one LUT interval (8 / 64 = 1/8 = 32 raw).
const LUT_INDEX_SHIFT: u32 = 5;

/// Which activation hardware evaluates sigmoid and tanh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationImpl {
    #[default]
    Approx,
    Lut,
}

impl ActivationImpl {
    pub fn sigmoid(self, z: FixedQ8_8) -> FixedQ8_8 {
        match self {
            Self::Approx => sigmoid_approx(z),
            Self::Lut => sigmoid_lut(z),
        }
    }

    pub fn tanh(self, z: FixedQ8_8) -> FixedQ8_8 {
        match self {
            Self::Approx => tanh_approx(z),
            Self::Lut => tanh_lut(z),
        }
    }
}

/// Sigmoid for a strictly negative raw input.
fn sigmoid_negative_raw(raw: i32) -> i32 {
    debug_assert!(raw < 0);
    // (z): integer part truncated toward zero, so zhat = z - (z) lies in (-1, 0].
    let int_part = raw / ONE_RAW;
    let zhat = raw - int_part * ONE_RAW;
    // 1/2 + zhat/4, the quarter taken with two arithmetic right shifts.
    let numerator = (ONE_RAW >> 1) + (zhat >> 2);
    let shift = int_part.unsigned_abs();
    if shift >= 16 {
        0
    } else {
        numerator >> shift
    }
}

/// Shift-based sigmoid approximation.
///
/// For `z < 0`: `(1/2 + ẑ/4) / 2^|(z)|` with `(z)` the integer part and
/// `ẑ = z + |(z)|`. For `z > 0` the result is `1 - σ(-z)`; `σ(0) = 1/2`.
pub fn sigmoid_approx(z: FixedQ8_8) -> FixedQ8_8 {
    let raw = i32::from(z.raw());
    let out = match raw {
        0 => ONE_RAW >> 1,
        r if r < 0 => sigmoid_negative_raw(r),
        r => ONE_RAW - sigmoid_negative_raw(-r),
    };
    FixedQ8_8::from_raw(out as i16)
}

/// `2 σ(2z) - 1`, with the doubling done as a saturating left shift.
pub fn tanh_approx(z: FixedQ8_8) -> FixedQ8_8 {
    let s = i32::from(sigmoid_approx(z.double()).raw());
    FixedQ8_8::from_raw((2 * s - ONE_RAW) as i16)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LutFunction {
    Sigmoid,
    Tanh,
}

/// 64 samples over `[-4, 4]`, each taken at its interval midpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LutTable {
    function: LutFunction,
    samples: [FixedQ8_8; LUT_SAMPLES],
}

impl LutTable {
    pub fn build(function: LutFunction) -> Self {
        let step = 2.0 * LUT_RANGE / LUT_SAMPLES as f64;
        let samples = std::array::from_fn(|i| {
            let z = -LUT_RANGE + (i as f64 + 0.5) * step;
            let y = match function {
                LutFunction::Sigmoid => sigmoid_exact(z),
                LutFunction::Tanh => tanh_exact(z),
            };
            FixedQ8_8::from_real(y)
        });
        Self { function, samples }
    }

    pub fn function(&self) -> LutFunction {
        self.function
    }

    pub fn samples(&self) -> &[FixedQ8_8; LUT_SAMPLES] {
        &self.samples
    }

    /// Interval index for an in-range input.
    pub fn index(z: FixedQ8_8) -> usize {
        let shifted = (i32::from(z.raw()) - LUT_LOW_RAW) >> LUT_INDEX_SHIFT;
        shifted.clamp(0, LUT_SAMPLES as i32 - 1) as usize
    }

    pub fn lookup(&self, z: FixedQ8_8) -> FixedQ8_8 {
        let raw = i32::from(z.raw());
        if raw <= LUT_LOW_RAW {
            return match self.function {
                LutFunction::Sigmoid => FixedQ8_8::ZERO,
                LutFunction::Tanh => -FixedQ8_8::ONE,
            };
        }
        if raw >= LUT_HIGH_RAW {
            return FixedQ8_8::ONE;
        }
        self.samples[Self::index(z)]
    }
}

fn sigmoid_table() -> &'static LutTable {
    static TABLE: OnceLock<LutTable> = OnceLock::new();
    TABLE.get_or_init(|| LutTable::build(LutFunction::Sigmoid))
}

fn tanh_table() -> &'static LutTable {
    static TABLE: OnceLock<LutTable> = OnceLock::new();
    TABLE.get_or_init(|| LutTable::build(LutFunction::Tanh))
}

pub fn sigmoid_lut(z: FixedQ8_8) -> FixedQ8_8 {
    sigmoid_table().lookup(z)
}

pub fn tanh_lut(z: FixedQ8_8) -> FixedQ8_8 {
    tanh_table().lookup(z)
}

pub fn sigmoid_exact<F: Float>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

pub fn tanh_exact<F: Float>(z: F) -> F {
    z.tanh()
}

/// One row of an activation sweep (see the `dump-activation` subcommand).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub z: f64,
    pub sigmoid_exact: f64,
    pub sigmoid_approx: f64,
    pub sigmoid_lut: f64,
    pub tanh_exact: f64,
    pub tanh_approx: f64,
    pub tanh_lut: f64,
}

/// Evaluate every Q8.8 value in `[lo, hi]`.
pub fn sweep(lo: FixedQ8_8, hi: FixedQ8_8) -> Vec<SweepRow> {
    (lo.raw()..=hi.raw())
        .map(|raw| {
            let z = FixedQ8_8::from_raw(raw);
            let x = z.to_real();
            SweepRow {
                z: x,
                sigmoid_exact: sigmoid_exact(x),
                sigmoid_approx: sigmoid_approx(z).to_real(),
                sigmoid_lut: sigmoid_lut(z).to_real(),
                tanh_exact: tanh_exact(x),
                tanh_approx: tanh_approx(z).to_real(),
                tanh_lut: tanh_lut(z).to_real(),
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "z,sigmoid_exact,sigmoid_approx,sigmoid_lut,tanh_exact,tanh_approx,tanh_lut\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.z, r.sigmoid_exact, r.sigmoid_approx, r.sigmoid_lut, r.tanh_exact, r.tanh_approx, r.tanh_lut
        ));
    }
    out
}
