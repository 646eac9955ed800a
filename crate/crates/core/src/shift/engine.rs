//! Multiply-free convolution over Q7.8 maps and whole-network inference.

use super::fixed::{accum_frac, FxVal, FX_FRAC};
use crate::error::{arg_err, shape_err, NbqError, Result};
use crate::qat::{Activation, FrozenLayer, FrozenNetwork, OutputHead};
use crate::quantizer::QuantizedKernel;
use crate::tensor::{avgpool2d, maxpool2d, softmax, ConvGeometry, Tensor};

/// Integer operations the convolver may use. There is no general multiply;
/// the one per-output scale is a separate, flagged operation.
pub trait Alu {
    fn shr(&mut self, v: i64, s: u32) -> i64;
    fn neg(&mut self, v: i64) -> i64;
    fn add(&mut self, a: i64, b: i64) -> i64;
    /// Post-accumulation scaling in extended precision.
    fn scale(&mut self, v: f64, s: f64) -> f64;

    /// `acc[j] += ±(src[j·step] >> shift)` for every `j`.
    fn tap_row(&mut self, acc: &mut [i64], src: &[i64], step: usize, shift: u32, negative: bool) {
        for (j, a) in acc.iter_mut().enumerate() {
            let mut t = self.shr(src[j * step], shift);
            if negative {
                t = self.neg(t);
            }
            *a = self.add(*a, t);
        }
    }
}

/// Plain integer arithmetic with vectorizable row loops.
#[derive(Clone, Copy, Debug, Default)]
pub struct FastAlu;

impl Alu for FastAlu {
    fn shr(&mut self, v: i64, s: u32) -> i64 {
        v >> s
    }

    fn neg(&mut self, v: i64) -> i64 {
        -v
    }

    fn add(&mut self, a: i64, b: i64) -> i64 {
        a + b
    }

    fn scale(&mut self, v: f64, s: f64) -> f64 {
        v * s
    }

    fn tap_row(&mut self, acc: &mut [i64], src: &[i64], step: usize, shift: u32, negative: bool) {
        if step == 1 {
            let src = &src[..acc.len()];
            if negative {
                acc.iter_mut().zip(src).for_each(|(a, &x)| *a -= x >> shift);
            } else {
                acc.iter_mut().zip(src).for_each(|(a, &x)| *a += x >> shift);
            }
        } else {
            for (j, a) in acc.iter_mut().enumerate() {
                let t = src[j * step] >> shift;
                *a += if negative { -t } else { t };
            }
        }
    }
}

/// Counts every operation it performs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CountingAlu {
    pub shifts: u64,
    pub negations: u64,
    pub adds: u64,
    pub scale_muls: u64,
}

impl CountingAlu {
    /// General multiplications performed: the trait offers none.
    pub fn general_muls(&self) -> u64 {
        0
    }
}

impl Alu for CountingAlu {
    fn shr(&mut self, v: i64, s: u32) -> i64 {
        self.shifts += 1;
        v >> s
    }

    fn neg(&mut self, v: i64) -> i64 {
        self.negations += 1;
        -v
    }

    fn add(&mut self, a: i64, b: i64) -> i64 {
        self.adds += 1;
        a + b
    }

    fn scale(&mut self, v: f64, s: f64) -> f64 {
        self.scale_muls += 1;
        v * s
    }
}

/// NCHW map of Q7.8 values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxMap {
    pub shape: [usize; 4],
    pub data: Vec<FxVal>,
}

impl FxMap {
    pub fn from_tensor(x: &Tensor) -> Result<Self> {
        let (n, c, h, w) = x.dims4()?;
        Ok(Self { shape: [n, c, h, w], data: x.data().iter().map(|&v| FxVal::from_real(v)).collect() })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.to_vec(), self.data.iter().map(|v| v.to_real()).collect()).expect("shape matches data")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Tap {
    shift: u32,
    negative: bool,
}

/// One conv stage mapped onto `P_m` input-channel by `P_n` output-channel tiles.
#[derive(Clone, Debug, PartialEq)]
pub struct SvpeLayerPlan {
    pub kernel: QuantizedKernel,
    pub pm: usize,
    pub pn: usize,
    pub stride: usize,
    pub pad: usize,
    /// Per-output-channel scale, kernel scale already included.
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub act: Activation,
    taps: Vec<Option<Tap>>,
    frac: u32,
}

impl SvpeLayerPlan {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: QuantizedKernel,
        stride: usize,
        pad: usize,
        scale: Vec<f64>,
        offset: Vec<f64>,
        act: Activation,
        pm: usize,
        pn: usize,
    ) -> Result<Self> {
        kernel.validate()?;
        if kernel.shape.len() != 4 {
            return shape_err(format!("kernel shape {:?} is not OIHW", kernel.shape));
        }
        if pm == 0 || pn == 0 {
            return arg_err("parallelism degrees must be positive");
        }
        if stride == 0 {
            return arg_err("stride must be at least 1");
        }
        let oc = kernel.shape[0];
        if scale.len() != oc || offset.len() != oc {
            return shape_err(format!("{} scales and {} offsets for {oc} output channels", scale.len(), offset.len()));
        }
        if scale.iter().chain(&offset).any(|v| !v.is_finite()) {
            return arg_err("folded scale and offset must be finite");
        }
        let taps = kernel
            .codes
            .iter()
            .map(|&e| kernel.shift_of(e).map(|shift| Tap { shift, negative: e < 0 }))
            .collect();
        let frac = accum_frac(kernel.n);
        Ok(Self { kernel, pm, pn, stride, pad, scale, offset, act, taps, frac })
    }

    pub fn from_frozen(layer: &FrozenLayer, pm: usize, pn: usize) -> Result<Self> {
        match layer {
            FrozenLayer::Conv { kernel, stride, pad, scale, offset, act } => {
                let s = scale.iter().map(|&s| s * kernel.scale).collect();
                Self::new(kernel.clone(), *stride, *pad, s, offset.clone(), *act, pm, pn)
            }
            _ => arg_err("only conv stages map onto the shift array"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape[0]
    }

    /// Accumulator fraction bits.
    pub fn frac(&self) -> u32 {
        self.frac
    }

    /// Channel counts after zero-padding to whole tiles.
    pub fn padded_channels(&self) -> (usize, usize) {
        (self.in_channels().div_ceil(self.pm) * self.pm, self.out_channels().div_ceil(self.pn) * self.pn)
    }

    pub fn geometry(&self, shape: [usize; 4]) -> Result<ConvGeometry> {
        ConvGeometry::new(&shape, &self.kernel.shape, self.stride, self.pad)
    }

    /// Raw accumulators `N × O × OH × OW`, each `Σ level · input` in units of
    /// `2^-frac`. Taps enter in row-major window order within each input
    /// channel, channels ascending, tile by tile.
    pub fn accumulate(&self, input: &FxMap, alu: &mut impl Alu) -> Result<Vec<i64>> {
        let g = self.geometry(input.shape)?;
        let (m, o) = (g.in_channels, g.out_channels);
        let (ph, pw) = (g.in_h + 2 * g.pad, g.in_w + 2 * g.pad);
        let (hw_out, hw_in) = (g.out_h * g.out_w, g.in_h * g.in_w);
        let (padded_m, padded_n) = self.padded_channels();
        let lift = self.frac - FX_FRAC;
        let mut out = vec![0i64; g.batch * o * hw_out];
        let mut planes = vec![0i64; m * ph * pw];
        for b in 0..g.batch {
            for ic in 0..m {
                let src = &input.data[(b * m + ic) * hw_in..][..hw_in];
                let dst = &mut planes[ic * ph * pw..][..ph * pw];
                for y in 0..g.in_h {
                    let row = &mut dst[(y + g.pad) * pw + g.pad..][..g.in_w];
                    for (d, s) in row.iter_mut().zip(&src[y * g.in_w..][..g.in_w]) {
                        *d = (s.0 as i64) << lift;
                    }
                }
            }
            for ot in (0..padded_n).step_by(self.pn) {
                for oc in ot..(ot + self.pn).min(o) {
                    let acc = &mut out[(b * o + oc) * hw_out..][..hw_out];
                    for it in (0..padded_m).step_by(self.pm) {
                        for ic in it..(it + self.pm).min(m) {
                            let plane = &planes[ic * ph * pw..][..ph * pw];
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let Some(tap) = self.taps[((oc * m + ic) * g.kh + ky) * g.kw + kx] else {
                                        continue;
                                    };
                                    for oy in 0..g.out_h {
                                        let start = (oy * g.stride + ky) * pw + kx;
                                        alu.tap_row(
                                            &mut acc[oy * g.out_w..][..g.out_w],
                                            &plane[start..],
                                            g.stride,
                                            tap.shift,
                                            tap.negative,
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `act(scale · acc + offset)` rounded half-to-even back to Q7.8.
    pub fn requantize(&self, acc: &[i64], shape: [usize; 4], alu: &mut impl Alu) -> FxMap {
        let hw = shape[2] * shape[3];
        let unit = (-(self.frac as f64)).exp2();
        let data = acc
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let c = (i / hw) % shape[1];
                let v = alu.scale(a as f64, self.scale[c] * unit) + self.offset[c];
                FxVal::from_real(self.act.apply(v))
            })
            .collect();
        FxMap { shape, data }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let g = self.geometry(input)?;
        Ok([g.batch, g.out_channels, g.out_h, g.out_w])
    }
}

pub fn conv2d_shift(input: &FxMap, plan: &SvpeLayerPlan, alu: &mut impl Alu) -> Result<FxMap> {
    let acc = plan.accumulate(input, alu)?;
    Ok(plan.requantize(&acc, plan.output_shape(input.shape)?, alu))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SvpeStage {
    Conv(SvpeLayerPlan),
    MaxPool { k: usize, stride: usize },
    AvgPool { k: usize, stride: usize },
}

/// A frozen network lowered onto the shift array. Conv stages run in fixed
/// point; pooling and the output head stay in real arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct SvpeEngine {
    pub stages: Vec<SvpeStage>,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub head: OutputHead,
}

impl SvpeEngine {
    pub fn new(net: &FrozenNetwork, pm: usize, pn: usize) -> Result<Self> {
        net.validate().map_err(|e| NbqError::State(format!("frozen network is inconsistent: {e}")))?;
        let stages = net
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    FrozenLayer::Conv { .. } => SvpeStage::Conv(SvpeLayerPlan::from_frozen(l, pm, pn)?),
                    FrozenLayer::MaxPool { k, stride } => SvpeStage::MaxPool { k: *k, stride: *stride },
                    FrozenLayer::AvgPool { k, stride } => SvpeStage::AvgPool { k: *k, stride: *stride },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { stages, input_shape: net.input_shape, classes: net.classes, head: net.head })
    }

    /// `N × classes` logits.
    pub fn logits_with(&self, x: &Tensor, alu: &mut impl Alu) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if [c, h, w] != self.input_shape {
            return shape_err(format!("input samples are {:?}, model expects {:?}", [c, h, w], self.input_shape));
        }
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = match stage {
                SvpeStage::Conv(plan) => conv2d_shift(&FxMap::from_tensor(&cur)?, plan, alu)?.to_tensor(),
                SvpeStage::MaxPool { k, stride } => maxpool2d(&cur, *k, *stride)?,
                SvpeStage::AvgPool { k, stride } => avgpool2d(&cur, *k, *stride)?,
            };
        }
        cur.reshape(&[n, self.classes])
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.logits_with(x, &mut FastAlu)
    }

    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.logits(x)?;
        match self.head {
            OutputHead::Softmax => softmax(&logits),
            OutputHead::Linear => Ok(logits),
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(crate::qat::argmax_rows(&self.logits(x)?))
    }
}

/// Class scores through the shift array with untiled channels.
pub fn svpe_infer(net: &FrozenNetwork, image: &Tensor) -> Result<Tensor> {
    SvpeEngine::new(net, 1, 1)?.scores(image)
}
