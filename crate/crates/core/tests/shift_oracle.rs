//! The shift datapath against exact rational arithmetic.

use nbq_core::qat::Activation;
use nbq_core::quantizer::{levels_r, QuantizedKernel};
use nbq_core::shift::{conv2d_shift, shift_mul, FastAlu, FxMap, FxVal, SvpeLayerPlan};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(num: i64, den_log2: u32) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::one() << den_log2)
}

fn from_f64(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// `±2^-(r-|e|)` for nonzero `e`; one bit is plain sign.
fn level(e: i8, n: u8) -> BigRational {
    if e == 0 {
        return BigRational::zero();
    }
    let r = levels_r(n);
    let mag = if r == 0 { BigRational::one() } else { q(1, r - e.unsigned_abs() as u32) };
    if e < 0 {
        -mag
    } else {
        mag
    }
}

fn max_code(n: u8) -> i8 {
    levels_r(n).max(1) as i8
}

/// Round half to even onto the 2^-8 grid, saturated to i16.
fn round_q78(x: &BigRational) -> i16 {
    let scaled = x * BigRational::from_integer(BigInt::from(256));
    let fl = scaled.floor();
    let diff = &scaled - &fl;
    let half = q(1, 1);
    let mut r = fl.to_integer();
    if diff > half || (diff == half && (&r % 2u32) != BigInt::zero()) {
        r += 1;
    }
    r.to_i64().unwrap_or(if scaled.is_positive() { i64::MAX } else { i64::MIN }).clamp(i16::MIN as i64, i16::MAX as i64) as i16
}

struct Case {
    n: u8,
    input: FxMap,
    kernel: QuantizedKernel,
    stride: usize,
    pad: usize,
    scale: Vec<f64>,
    offset: Vec<f64>,
    relu: bool,
    pm: usize,
    pn: usize,
}

fn random_case(n: u8, rng: &mut ChaCha8Rng) -> Case {
    let (b, c, o) = (rng.random_range(1..3), rng.random_range(1..6), rng.random_range(1..7));
    let k: usize = [1, 3, 5][rng.random_range(0..3)];
    let pad = rng.random_range(0..=k / 2 + 1);
    let h = rng.random_range(k.saturating_sub(2 * pad).max(1)..9);
    let w = rng.random_range(k.saturating_sub(2 * pad).max(1)..9);
    let wide = rng.random_bool(0.2);
    let data = (0..b * c * h * w)
        .map(|_| FxVal(if wide { rng.random_range(i16::MIN..=i16::MAX) } else { rng.random_range(-1024..1024) }))
        .collect();
    let m = max_code(n);
    let codes = (0..o * c * k * k)
        .map(|_| {
            let e = rng.random_range(-m..=m);
            if n == 1 && e == 0 {
                1
            } else {
                e
            }
        })
        .collect();
    // Dyadic scales and offsets keep the f64 post-scale exact, so the one
    // Q7.8 rounding is the only error either side makes.
    let scale = (0..o).map(|_| rng.random_range(1..4096) as f64 / 1024.0).collect();
    let offset = (0..o).map(|_| rng.random_range(-4096..4096) as f64 / 256.0).collect();
    Case {
        n,
        input: FxMap { shape: [b, c, h, w], data },
        kernel: QuantizedKernel { n, scale: 1.0, shape: vec![o, c, k, k], codes },
        stride: rng.random_range(1..3),
        pad,
        scale,
        offset,
        relu: rng.random_bool(0.5),
        pm: rng.random_range(1..6),
        pn: rng.random_range(1..6),
    }
}

/// Direct convolution over exact rationals.
fn oracle(c: &Case) -> Vec<i16> {
    let [b, m, h, w] = c.input.shape;
    let (o, k) = (c.kernel.shape[0], c.kernel.shape[2]);
    let oh = (h + 2 * c.pad - k) / c.stride + 1;
    let ow = (w + 2 * c.pad - k) / c.stride + 1;
    let mut out = Vec::with_capacity(b * o * oh * ow);
    for bi in 0..b {
        for oc in 0..o {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = BigRational::zero();
                    for ic in 0..m {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * c.stride + ky) as isize - c.pad as isize;
                                let ix = (x * c.stride + kx) as isize - c.pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let a = c.input.data[((bi * m + ic) * h + iy as usize) * w + ix as usize].0;
                                let e = c.kernel.codes[((oc * m + ic) * k + ky) * k + kx];
                                acc += q(a as i64, 8) * level(e, c.n);
                            }
                        }
                    }
                    let mut v = acc * from_f64(c.scale[oc]) + from_f64(c.offset[oc]);
                    if c.relu && v.is_negative() {
                        v = BigRational::zero();
                    }
                    out.push(round_q78(&v));
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_shift_equals_rational_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let n = (trial % 4 + 1) as u8;
        let c = random_case(n, &mut rng);
        let act = if c.relu { Activation::Relu } else { Activation::Identity };
        let plan =
            SvpeLayerPlan::new(c.kernel.clone(), c.stride, c.pad, c.scale.clone(), c.offset.clone(), act, c.pm, c.pn).unwrap();
        let got: Vec<i16> = conv2d_shift(&c.input, &plan, &mut FastAlu).unwrap().data.iter().map(|v| v.0).collect();
        assert_eq!(got, oracle(&c), "trial {trial}, n = {n}");
    }
}

#[test]
fn shift_mul_is_exact_for_every_input_and_code() {
    let n = 3;
    let m = max_code(n);
    for e in -m..=m {
        let lv = level(e, n);
        for raw in i16::MIN..=i16::MAX {
            let got = shift_mul(FxVal(raw), e, n).unwrap();
            assert_eq!(q(got.raw, got.frac), q(raw as i64, 8) * &lv, "raw {raw}, code {e}");
        }
    }
    assert!(shift_mul(FxVal(1), m + 1, n).is_err());
}
