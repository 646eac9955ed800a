use serde::{Deserialize, Serialize};

use super::act::Activation;
use super::network::{argmax_rows, Layer, Network, OutputHead};
use super::{reconstruct_assign, snap_iterations};
use crate::error::{shape_err, NbqError, Result};
use crate::quantizer::{decode, encode, moment_match, moment_report, staircase, QuantSpec, QuantizedKernel};
use crate::tensor::{avgpool2d, conv2d, maxpool2d, softmax, Tensor};

/// Relative tolerance used when reporting the zero-gradient snap residual.
pub const SNAP_TOL: f64 = 1e-6;

/// One stage of a deployable network. A conv stage computes
/// `act(scale[c] · conv(x, decode(kernel))[c] + offset[c])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrozenLayer {
    Conv {
        kernel: QuantizedKernel,
        stride: usize,
        pad: usize,
        scale: Vec<f64>,
        offset: Vec<f64>,
        act: Activation,
    },
    MaxPool { k: usize, stride: usize },
    AvgPool { k: usize, stride: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenNetwork {
    pub layers: Vec<FrozenLayer>,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub head: OutputHead,
    /// Opaque architecture description carried along for tooling.
    pub spec_json: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFreezeReport {
    pub layer: usize,
    pub shape: Vec<usize>,
    /// `(code, count)` for every code in `−r..=r` (`±1` for one bit).
    pub histogram: Vec<(i8, usize)>,
    pub mean_w: f64,
    pub std_w: f64,
    pub mean_q: f64,
    pub std_q: f64,
    /// Variance-matching scale, `None` when the layer is degenerate.
    pub moment_scale: Option<f64>,
    /// `max |W̃ − Ŵ|` under the training α.
    pub residual: f64,
    /// The same gap after the zero-gradient snap iterations.
    pub snap_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub n: u8,
    pub alpha: f64,
    pub snap_iterations: usize,
    pub quantized_params: usize,
    pub layers: Vec<LayerFreezeReport>,
}

impl FreezeReport {
    pub fn max_residual(&self) -> f64 {
        self.layers.iter().map(|l| l.residual).fold(0.0, f64::max)
    }
}

fn gap(w: &Tensor, spec: &QuantSpec, tilde: &Tensor) -> f64 {
    w.data()
        .iter()
        .zip(tilde.data())
        .fold(0.0f64, |m, (&x, &t)| m.max((t - spec.scale * staircase(x.clamp(-1.0, 1.0), spec.n)).abs()))
}

/// Snaps every conv weight to its staircase level and folds each following
/// batch norm into a per-channel affine map. Every conv must be quantized and
/// every batch norm or activation must follow a conv.
pub fn freeze(net: &Network, spec_json: &str) -> Result<(FrozenNetwork, FreezeReport)> {
    net.validate()?;
    let spec = net.quant;
    let iters = snap_iterations(spec.alpha, SNAP_TOL);
    let mut layers = Vec::new();
    let mut reports = Vec::new();
    let mut i = 0;
    while i < net.layers.len() {
        match &net.layers[i] {
            Layer::Conv(c) => {
                if !c.quantized {
                    return Err(NbqError::Unsupported(format!("layer {i}: conv is not quantized and cannot be frozen")));
                }
                let index = i;
                let out_ch = c.weight.shape()[0];
                let levels = c.weight.map(|w| spec.scale * staircase(w.clamp(-1.0, 1.0), spec.n));
                let kernel = encode(&levels, &spec)?;
                let mut scale = vec![1.0; out_ch];
                let mut offset = c.bias.as_ref().map(|b| b.data().to_vec()).unwrap_or_else(|| vec![0.0; out_ch]);
                i += 1;
                if let Some(Layer::BatchNorm(bn)) = net.layers.get(i) {
                    let (s, t) = bn.folded();
                    for ch in 0..out_ch {
                        offset[ch] = s[ch] * offset[ch] + t[ch];
                        scale[ch] = s[ch];
                    }
                    i += 1;
                }
                let mut act = Activation::Identity;
                if let Some(Layer::Act(a)) = net.layers.get(i) {
                    act = *a;
                    i += 1;
                }

                let tilde = super::reconstruct(&c.weight, &spec);
                let mut snapped = c.weight.clone();
                for _ in 0..iters {
                    reconstruct_assign(&mut snapped, &spec);
                }
                let m = moment_report(&c.weight, &spec)?;
                let counts = kernel.histogram();
                let max_code = kernel.max_code();
                let histogram = (-max_code..=max_code)
                    .zip(counts)
                    .filter(|&(e, _)| kernel.r() > 0 || e != 0)
                    .map(|(e, n)| (e as i8, n))
                    .collect();
                reports.push(LayerFreezeReport {
                    layer: index,
                    shape: c.weight.shape().to_vec(),
                    histogram,
                    mean_w: m.mean_w,
                    std_w: m.std_w,
                    mean_q: m.mean_q,
                    std_q: m.std_q,
                    moment_scale: moment_match(&c.weight, &spec).ok().map(|s| s.scale),
                    residual: gap(&c.weight, &spec, &tilde),
                    snap_residual: gap(&snapped, &spec, &snapped),
                });
                layers.push(FrozenLayer::Conv { kernel, stride: c.stride, pad: c.pad, scale, offset, act });
            }
            Layer::MaxPool { k, stride } => {
                layers.push(FrozenLayer::MaxPool { k: *k, stride: *stride });
                i += 1;
            }
            Layer::AvgPool { k, stride } => {
                layers.push(FrozenLayer::AvgPool { k: *k, stride: *stride });
                i += 1;
            }
            Layer::BatchNorm(_) | Layer::Act(_) => {
                return Err(NbqError::Unsupported(format!(
                    "layer {i}: batch norm and activation layers must directly follow a conv to be folded"
                )));
            }
        }
    }
    let frozen = FrozenNetwork {
        layers,
        input_shape: net.input_shape,
        classes: net.classes,
        head: net.head,
        spec_json: spec_json.to_string(),
    };
    frozen.validate()?;
    let report = FreezeReport {
        n: spec.n,
        alpha: spec.alpha,
        snap_iterations: iters,
        quantized_params: reports.iter().map(|r| r.shape.iter().product::<usize>()).sum(),
        layers: reports,
    };
    Ok((frozen, report))
}

impl FrozenNetwork {
    /// Shape-chains the stages and checks kernels and folded arrays.
    pub fn validate(&self) -> Result<()> {
        let mut cur = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            let full = [1, cur[0], cur[1], cur[2]];
            cur = match layer {
                FrozenLayer::Conv { kernel, stride, pad, scale, offset, .. } => {
                    kernel.validate()?;
                    let g = crate::tensor::ConvGeometry::new(&full, &kernel.shape, *stride, *pad)
                        .map_err(|e| NbqError::Shape(format!("stage {i}: {e}")))?;
                    if scale.len() != g.out_channels || offset.len() != g.out_channels {
                        return shape_err(format!("stage {i}: folded arrays do not match {} channels", g.out_channels));
                    }
                    [g.out_channels, g.out_h, g.out_w]
                }
                FrozenLayer::MaxPool { k, stride } | FrozenLayer::AvgPool { k, stride } => {
                    let g = crate::tensor::PoolGeometry::new(&full, *k, *stride)
                        .map_err(|e| NbqError::Shape(format!("stage {i}: {e}")))?;
                    [cur[0], g.out_h, g.out_w]
                }
            };
        }
        if cur.iter().product::<usize>() != self.classes {
            return shape_err(format!("frozen network ends in {cur:?}, expected {} outputs", self.classes));
        }
        Ok(())
    }

    pub fn kernels(&self) -> impl Iterator<Item = &QuantizedKernel> {
        self.layers.iter().filter_map(|l| match l {
            FrozenLayer::Conv { kernel, .. } => Some(kernel),
            _ => None,
        })
    }

    /// Real-arithmetic reference: decoded weights, folded affine maps, f64
    /// throughout. Returns `N × classes` logits.
    pub fn logits_real(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if [c, h, w] != self.input_shape {
            return shape_err(format!("input samples are {:?}, model expects {:?}", [c, h, w], self.input_shape));
        }
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                FrozenLayer::Conv { kernel, stride, pad, scale, offset, act } => {
                    let mut y = conv2d(&cur, &decode(kernel), *stride, *pad)?;
                    let (n, oc, oh, ow) = y.dims4()?;
                    let hw = oh * ow;
                    let d = y.data_mut();
                    for s in 0..n {
                        for ch in 0..oc {
                            for v in &mut d[(s * oc + ch) * hw..(s * oc + ch + 1) * hw] {
                                *v = act.apply(scale[ch] * *v + offset[ch]);
                            }
                        }
                    }
                    y
                }
                FrozenLayer::MaxPool { k, stride } => maxpool2d(&cur, *k, *stride)?,
                FrozenLayer::AvgPool { k, stride } => avgpool2d(&cur, *k, *stride)?,
            };
        }
        let n = cur.shape()[0];
        cur.reshape(&[n, self.classes])
    }

    /// Softmax scores for a softmax head, logits otherwise.
    pub fn scores(&self, logits: &Tensor) -> Result<Tensor> {
        match self.head {
            OutputHead::Softmax => softmax(logits),
            OutputHead::Linear => Ok(logits.clone()),
        }
    }

    pub fn predict_real(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits_real(x)?))
    }
}
