//! Q7.8 activations and the widened shift accumulator.

use crate::error::{NbqError, Result};
use crate::quantizer::code::{max_code, shift_of};
use crate::quantizer::levels_r;

/// Fraction bits of an activation.
pub const FX_FRAC: u32 = 8;

/// Signed Q7.8: real value `raw / 256`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FxVal(pub i16);

impl FxVal {
    pub const MAX: FxVal = FxVal(i16::MAX);
    pub const MIN: FxVal = FxVal(i16::MIN);

    /// Round half to even at 2⁻⁸, saturating at the range ends. NaN maps to zero.
    pub fn from_real(x: f64) -> Self {
        if x.is_nan() {
            return FxVal(0);
        }
        let q = (x * 256.0).round_ties_even();
        FxVal(q.clamp(i16::MIN as f64, i16::MAX as f64) as i16)
    }

    pub fn to_real(self) -> f64 {
        self.0 as f64 / 256.0
    }

    pub fn raw(self) -> i16 {
        self.0
    }
}

/// Accumulator fraction bits for an `n`-bit kernel: Q15.16 while every shift
/// `i ≤ r − 1` fits in eight spare bits, Q23.24 beyond that.
pub fn accum_frac(n: u8) -> u32 {
    if levels_r(n) <= 8 {
        16
    } else {
        24
    }
}

/// Whether every shift of an `n`-bit kernel is exact in its accumulator.
pub fn shifts_exact(n: u8) -> bool {
    levels_r(n).saturating_sub(1) <= accum_frac(n) - FX_FRAC
}

/// Fixed-point accumulator: real value `raw · 2^-frac`. Held in 64 bits so a
/// full-width window sum cannot overflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FxAccum {
    pub raw: i64,
    pub frac: u32,
}

impl FxAccum {
    pub fn zero(frac: u32) -> Self {
        Self { raw: 0, frac }
    }

    /// Widens a Q7.8 activation without loss.
    pub fn widen(a: FxVal, frac: u32) -> Self {
        Self { raw: (a.0 as i64) << (frac - FX_FRAC), frac }
    }

    /// Exact as long as `|raw| < 2^53`.
    pub fn to_real(self) -> f64 {
        self.raw as f64 * (-(self.frac as f64)).exp2()
    }
}

/// `a · level(code)` via an arithmetic right shift of the widened activation.
///
/// Level `±2⁻ⁱ` is a right shift by `i` in an accumulator with more fraction
/// bits than the operand, which is the same as a left shift by `r − 1 − i`
/// into an accumulator scaled by `2^{r−1}`.
pub fn shift_mul(a: FxVal, code: i8, n: u8) -> Result<FxAccum> {
    let frac = accum_frac(n);
    if (code as i32).abs() > max_code(n) {
        return Err(NbqError::Encoding {
            index: 0,
            reason: format!("code {code} outside ±{} for n = {n}", max_code(n)),
        });
    }
    let Some(i) = shift_of(code, n) else {
        return Ok(FxAccum::zero(frac));
    };
    let shifted = FxAccum::widen(a, frac).raw >> i;
    Ok(FxAccum { raw: if code < 0 { -shifted } else { shifted }, frac })
}
