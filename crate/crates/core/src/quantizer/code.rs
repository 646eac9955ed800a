use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{levels_r, QuantSpec, MAX_BITS};
use crate::error::{NbqError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NBQK";
const VERSION: u16 = 1;

/// Codes `e ∈ [-r, r]`; `|e| = r - i` for level `±2^-i`, `0` for zero.
/// One-bit kernels use `±1` for `±2^0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedKernel {
    pub n: u8,
    pub scale: f64,
    pub shape: Vec<usize>,
    pub codes: Vec<i8>,
}

impl QuantizedKernel {
    pub fn r(&self) -> u32 {
        levels_r(self.n)
    }

    /// Largest legal `|e|`.
    pub fn max_code(&self) -> i32 {
        max_code(self.n)
    }

    /// Shift index `i` of a nonzero code.
    pub fn shift_of(&self, e: i8) -> Option<u32> {
        shift_of(e, self.n)
    }

    pub fn level_of(&self, e: i8) -> f64 {
        match self.shift_of(e) {
            Some(i) => (e.signum() as f64) * 2f64.powi(-(i as i32)),
            None => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Count per code value, indexed by `e + max_code`.
    pub fn histogram(&self) -> Vec<usize> {
        let m = self.max_code();
        let mut h = vec![0; (2 * m + 1) as usize];
        for &e in &self.codes {
            h[(e as i32 + m) as usize] += 1;
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BITS).contains(&self.n) {
            return Err(NbqError::Argument(format!("bit width {} outside 1..={MAX_BITS}", self.n)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(NbqError::Argument(format!("kernel scale {} must be positive", self.scale)));
        }
        if self.shape.iter().product::<usize>() != self.codes.len() {
            return Err(NbqError::Shape(format!(
                "kernel shape {:?} does not hold {} codes",
                self.shape,
                self.codes.len()
            )));
        }
        let m = self.max_code();
        for (index, &e) in self.codes.iter().enumerate() {
            if (e as i32).abs() > m || (self.n == 1 && e == 0) {
                return Err(NbqError::Encoding {
                    index,
                    reason: format!("code {e} not valid for n = {}", self.n),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn max_code(n: u8) -> i32 {
    levels_r(n).max(1) as i32
}

pub(crate) fn shift_of(e: i8, n: u8) -> Option<u32> {
    if e == 0 {
        return None;
    }
    let r = levels_r(n);
    if r == 0 {
        return Some(0);
    }
    Some(r - e.unsigned_abs() as u32)
}

/// Encodes values that are exactly `scale · level`.
pub fn encode(values: &Tensor, spec: &QuantSpec) -> Result<QuantizedKernel> {
    spec.validate()?;
    let r = spec.r();
    let mut codes = Vec::with_capacity(values.len());
    for (index, &v) in values.data().iter().enumerate() {
        let level = v / spec.scale;
        let code = code_for(level, r).ok_or_else(|| NbqError::Encoding {
            index,
            reason: format!("{v} is not a {}-bit level at scale {}", spec.n, spec.scale),
        })?;
        codes.push(code);
    }
    Ok(QuantizedKernel {
        n: spec.n,
        scale: spec.scale,
        shape: values.shape().to_vec(),
        codes,
    })
}

fn code_for(level: f64, r: u32) -> Option<i8> {
    if level == 0.0 {
        return (r > 0).then_some(0);
    }
    let a = level.abs();
    let sign = if level < 0.0 { -1 } else { 1 };
    if r == 0 {
        return (a == 1.0).then_some(sign);
    }
    (0..r)
        .find(|&i| a == 2f64.powi(-(i as i32)))
        .map(|i| sign * (r - i) as i8)
}

pub fn decode_levels(k: &QuantizedKernel) -> Tensor {
    let data = k.codes.iter().map(|&e| k.level_of(e)).collect();
    Tensor::new(k.shape.clone(), data).expect("kernel shape matches its codes")
}

pub fn decode(k: &QuantizedKernel) -> Tensor {
    decode_levels(k).scale(k.scale)
}

pub fn write_kernel<W: Write>(k: &QuantizedKernel, w: &mut W) -> Result<()> {
    k.validate()?;
    if k.shape.len() > u8::MAX as usize {
        return Err(NbqError::Unsupported(format!("kernel rank {} too large", k.shape.len())));
    }
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u8(k.n)?;
    w.write_u8(k.r() as u8)?;
    w.write_f64::<LittleEndian>(k.scale)?;
    w.write_u8(k.shape.len() as u8)?;
    for &d in &k.shape {
        let d = u32::try_from(d).map_err(|_| NbqError::Unsupported(format!("extent {d} exceeds u32")))?;
        w.write_u32::<LittleEndian>(d)?;
    }
    let bytes: Vec<u8> = k.codes.iter().map(|&c| c as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Tracks the byte position so format errors can name it.
pub(crate) struct Counted<R> {
    inner: R,
    pub(crate) pos: u64,
}

impl<R: Read> Counted<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, pos: 0 }
    }

    pub(crate) fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(NbqError::Format {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    pub(crate) fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.pos += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => self.fail(format!("truncated while reading {what}")),
            Err(e) => Err(e.into()),
        }
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b, what)?;
        Ok((&b[..]).read_u16::<LittleEndian>()?)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok((&b[..]).read_u32::<LittleEndian>()?)
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok((&b[..]).read_u64::<LittleEndian>()?)
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let mut b = [0u8; 4];
        self.exact(&mut b, "magic")?;
        if &b != expected {
            return Err(NbqError::Format {
                offset: start,
                reason: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&b),
                    String::from_utf8_lossy(expected)
                ),
            });
        }
        Ok(())
    }

    pub(crate) fn f64_vec(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        (0..len).map(|_| self.f64(what)).collect()
    }
}

pub fn read_kernel<R: Read>(r: &mut R) -> Result<QuantizedKernel> {
    let mut c = Counted::new(r);
    read_kernel_counted(&mut c)
}

pub(crate) fn read_kernel_counted<R: Read>(c: &mut Counted<R>) -> Result<QuantizedKernel> {
    c.magic(MAGIC)?;
    let version = c.u16("version")?;
    if version != VERSION {
        return c.fail(format!("unsupported kernel version {version}"));
    }
    let n = c.u8("bit width")?;
    if !(1..=MAX_BITS).contains(&n) {
        return c.fail(format!("bit width {n} outside 1..={MAX_BITS}"));
    }
    let r = c.u8("level count")?;
    if r as u32 != levels_r(n) {
        return c.fail(format!("level count {r} inconsistent with n = {n}"));
    }
    let scale = c.f64("scale")?;
    let rank = c.u8("rank")?;
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(c.u32("extent")? as usize);
    }
    let len: usize = shape.iter().product();
    let body = c.pos;
    let mut bytes = vec![0u8; len];
    c.exact(&mut bytes, "codes")?;
    let k = QuantizedKernel {
        n,
        scale,
        shape,
        codes: bytes.into_iter().map(|b| b as i8).collect(),
    };
    match k.validate() {
        Err(NbqError::Encoding { index, reason }) => Err(NbqError::Format {
            offset: body + index as u64,
            reason,
        }),
        Err(e) => Err(NbqError::Format {
            offset: body,
            reason: e.to_string(),
        }),
        Ok(()) => Ok(k),
    }
}

impl QuantizedKernel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_kernel(self, &mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Counted::new(bytes);
        let k = read_kernel_counted(&mut c)?;
        if c.pos as usize != bytes.len() {
            return c.fail("trailing bytes after kernel");
        }
        Ok(k)
    }
}
