//! Power-of-two weight quantization.
//!
//! An `n`-bit weight takes one of `2r + 1` values, `r = 2^(n-1) - 1`:
//! zero or `±2^-i` for `i = 0..r`. One bit reduces to `sign(w)`.

pub(crate) mod code;
mod density;
mod loss;
mod moments;
pub mod quad;

pub use code::{decode, decode_levels, encode, read_kernel, write_kernel, QuantizedKernel};
pub use density::Density;
pub use loss::{loss_delta, sampling_loss, sampling_loss_table};
pub use moments::{moment_match, moment_report, MomentReport};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

pub const MAX_BITS: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub n: u8,
    pub alpha: f64,
    pub lambda: f64,
    pub scale: f64,
}

impl QuantSpec {
    /// `n`-bit spec with α = 0.5, the level-sum λ and unit scale.
    pub fn new(n: u8) -> Result<Self> {
        let spec = Self {
            n,
            alpha: 0.5,
            lambda: default_lambda(n),
            scale: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        self.scale = scale;
        self.validate()?;
        Ok(self)
    }

    /// α may sit on either end of [0, 1]: 0 freezes, 1 disables quantization.
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BITS).contains(&self.n) {
            return arg_err(format!("bit width {} outside 1..={MAX_BITS}", self.n));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return arg_err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return arg_err(format!("lambda {} must be positive", self.lambda));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return arg_err(format!("scale {} must be positive", self.scale));
        }
        Ok(())
    }

    pub fn r(&self) -> u32 {
        levels_r(self.n)
    }

    /// Blend factor usable for training updates.
    pub fn check_trainable(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return arg_err("alpha = 0 is only valid for freezing");
        }
        Ok(())
    }
}

pub fn levels_r(n: u8) -> u32 {
    (1u32 << (n - 1)) - 1
}

/// `λ(n) = 2·Σ_{i<r} 2^-2i`; one bit uses a single term.
pub fn default_lambda(n: u8) -> f64 {
    if !(1..=MAX_BITS).contains(&n) {
        return 1.0;
    }
    let terms = levels_r(n).max(1);
    2.0 * (0..terms).map(|i| 4f64.powi(-(i as i32))).sum::<f64>()
}

/// Lower edge of the band mapped to `2^-(j-1)`, for `j = 1..=r`.
///
/// Inner edges sit halfway between neighbouring levels. The last one sits
/// halfway between the smallest level and zero.
pub fn threshold(n: u8, j: u32) -> f64 {
    let r = levels_r(n);
    debug_assert!((1..=r).contains(&j));
    if j == r {
        2f64.powi(-(r as i32))
    } else {
        3.0 * 2f64.powi(-(j as i32 + 1))
    }
}

/// Shift index `i` of the level `2^-i` chosen for `|w|`, or `None` for zero.
pub fn shift_index(w: f64, n: u8) -> Option<u32> {
    let r = levels_r(n);
    if r == 0 {
        return Some(0);
    }
    let a = w.abs();
    (1..=r).find(|&j| a >= threshold(n, j)).map(|j| j - 1)
}

/// Nearest power-of-two level of `w` (|w| ≤ 1), unscaled.
pub fn staircase(w: f64, n: u8) -> f64 {
    let sign = if w < 0.0 { -1.0 } else { 1.0 };
    match shift_index(w, n) {
        Some(i) => sign * 2f64.powi(-(i as i32)),
        None => 0.0,
    }
}

pub fn staircase_tensor(w: &Tensor, n: u8) -> Tensor {
    w.map(|v| staircase(v, n))
}

/// All distinct levels in ascending order.
pub fn levels(n: u8) -> Vec<f64> {
    let r = levels_r(n);
    if r == 0 {
        return vec![-1.0, 1.0];
    }
    let mags: Vec<f64> = (0..r).map(|i| 2f64.powi(-(i as i32))).collect();
    let mut out: Vec<f64> = mags.iter().map(|m| -m).collect();
    out.push(0.0);
    out.extend(mags.iter().rev());
    out
}
