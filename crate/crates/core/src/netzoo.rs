//! Declarative network descriptions and the reference all-convolutional
//! architecture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, NbqError, Result};
use crate::qat::{Activation, BnState, ConvLayer, Layer, Network, OutputHead, WeightMode};
use crate::quantizer::QuantSpec;
use crate::tensor::Tensor;

pub const SPEC_VERSION: u32 = 1;
pub const MIN_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Expands to conv → batch norm → activation.
    ConvQuantized { k: usize, stride: usize, out_channels: usize },
    Pool { kind: PoolKind, k: usize, stride: usize },
    /// Average over the whole remaining feature map.
    GlobalAvgpool,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightInit {
    /// `U(−limit, limit)`.
    Uniform { limit: f64 },
    /// `N(0, 2/fan_in)`, clipped to `[−1, 1]`.
    He,
}

impl Default for WeightInit {
    fn default() -> Self {
        WeightInit::Uniform { limit: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub version: u32,
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub multiplier: f64,
    pub layers: Vec<LayerSpec>,
}

/// Channel widths of the reference architecture at full size.
const NBQNN_STAGES: [&[(usize, usize)]; 3] = [&[(3, 128), (3, 128), (3, 128)], &[(3, 256), (3, 256), (3, 256)], &[(3, 512), (1, 1024)]];

pub fn scaled_channels(base: usize, multiplier: f64) -> usize {
    ((base as f64 * multiplier).round() as usize).max(MIN_CHANNELS)
}

impl NetworkSpec {
    /// The reference architecture on a 32×32 RGB input, channel counts scaled
    /// by `multiplier` (rounded, at least four). The classifier keeps exactly
    /// `classes` channels.
    pub fn nbqnn(classes: usize, multiplier: f64) -> Result<Self> {
        Self::nbqnn_with_input(classes, multiplier, [3, 32, 32])
    }

    pub fn nbqnn_with_input(classes: usize, multiplier: f64, input: [usize; 3]) -> Result<Self> {
        if classes < 2 {
            return arg_err("need at least two classes");
        }
        if !(multiplier > 0.0 && multiplier <= 1.0) {
            return arg_err(format!("channel multiplier {multiplier} outside (0, 1]"));
        }
        let mut layers = Vec::new();
        for (s, stage) in NBQNN_STAGES.iter().enumerate() {
            for &(k, c) in stage.iter() {
                layers.push(LayerSpec::ConvQuantized { k, stride: 1, out_channels: scaled_channels(c, multiplier) });
            }
            if s < 2 {
                layers.push(LayerSpec::Pool { kind: PoolKind::Max, k: 2, stride: 2 });
            }
        }
        layers.push(LayerSpec::ConvQuantized { k: 1, stride: 1, out_channels: classes });
        layers.push(LayerSpec::Pool { kind: PoolKind::Avg, k: 8, stride: 8 });
        layers.push(LayerSpec::Softmax);
        let spec = Self { version: SPEC_VERSION, input, classes, multiplier, layers };
        spec.shapes()?;
        Ok(spec)
    }

    /// Per-sample `[C, H, W]` after each descriptor.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        if self.version != SPEC_VERSION {
            return Err(NbqError::Unsupported(format!("network spec version {} (expected {SPEC_VERSION})", self.version)));
        }
        if self.input.contains(&0) {
            return Err(NbqError::Shape(format!("input shape {:?} has a zero extent", self.input)));
        }
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let bad = |msg: String| Err(NbqError::Shape(format!("layer {i}: {msg}")));
            cur = match *l {
                LayerSpec::ConvQuantized { k, stride, out_channels } => {
                    if k == 0 || stride == 0 || out_channels == 0 {
                        return bad("conv needs k, stride and channels ≥ 1".into());
                    }
                    let pad = k / 2;
                    if cur[1] + 2 * pad < k || cur[2] + 2 * pad < k {
                        return bad(format!("{k}×{k} kernel larger than padded {}×{} input", cur[1], cur[2]));
                    }
                    [out_channels, (cur[1] + 2 * pad - k) / stride + 1, (cur[2] + 2 * pad - k) / stride + 1]
                }
                LayerSpec::Pool { k, stride, .. } => {
                    if k == 0 || stride == 0 {
                        return bad("pool needs k, stride ≥ 1".into());
                    }
                    if cur[1] < k || cur[2] < k || !(cur[1] - k).is_multiple_of(stride) || !(cur[2] - k).is_multiple_of(stride) {
                        return bad(format!("{k}×{k}/{stride} pool does not tile a {}×{} map", cur[1], cur[2]));
                    }
                    [cur[0], (cur[1] - k) / stride + 1, (cur[2] - k) / stride + 1]
                }
                LayerSpec::GlobalAvgpool => [cur[0], 1, 1],
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return bad("softmax must be the last layer".into());
                    }
                    cur
                }
            };
            out.push(cur);
        }
        let last = out.last().copied().unwrap_or(self.input);
        if last.iter().product::<usize>() != self.classes {
            return Err(NbqError::Shape(format!("network ends in {last:?}, expected {} outputs", self.classes)));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.shapes()?;
        Ok(spec)
    }

    /// Builds a trainable network. Hidden convs use ReLU, or the quantized
    /// activation when `activation_quant` is set; the last conv keeps a
    /// linear output.
    pub fn build(&self, quant: QuantSpec, activation_quant: bool, init: WeightInit, seed: u64) -> Result<Network> {
        let shapes = self.shapes()?;
        quant.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last_conv = self.layers.iter().rposition(|l| matches!(l, LayerSpec::ConvQuantized { .. }));
        let hidden = if activation_quant { Activation::quantized(&quant) } else { Activation::Relu };
        let mut layers = Vec::new();
        let mut head = OutputHead::Linear;
        let mut cur = self.input;
        for (i, (l, shape)) in self.layers.iter().zip(&shapes).enumerate() {
            match *l {
                LayerSpec::ConvQuantized { k, stride, out_channels } => {
                    let wshape = [out_channels, cur[0], k, k];
                    let fan_in = cur[0] * k * k;
                    let weight = init_weights(&wshape, fan_in, init, &mut rng)?;
                    layers.push(Layer::Conv(ConvLayer { weight, bias: None, stride, pad: k / 2, quantized: true }));
                    layers.push(Layer::BatchNorm(BnState::new(out_channels)));
                    let act = if Some(i) == last_conv { Activation::Identity } else { hidden };
                    layers.push(Layer::Act(act));
                }
                LayerSpec::Pool { kind: PoolKind::Max, k, stride } => layers.push(Layer::MaxPool { k, stride }),
                LayerSpec::Pool { kind: PoolKind::Avg, k, stride } => layers.push(Layer::AvgPool { k, stride }),
                LayerSpec::GlobalAvgpool => {
                    if cur[1] != cur[2] {
                        return Err(NbqError::Unsupported("global average pooling needs a square map".into()));
                    }
                    layers.push(Layer::AvgPool { k: cur[1], stride: cur[1] });
                }
                LayerSpec::Softmax => head = OutputHead::Softmax,
            }
            cur = *shape;
        }
        Network::new(layers, self.input, self.classes, head, quant, WeightMode::Reconstruct)
    }
}

fn init_weights(shape: &[usize; 4], fan_in: usize, init: WeightInit, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = match init {
        WeightInit::Uniform { limit } => {
            if !(limit > 0.0 && limit <= 1.0) {
                return arg_err(format!("uniform init limit {limit} outside (0, 1]"));
            }
            let d = Uniform::new_inclusive(-limit, limit).map_err(|e| NbqError::Argument(e.to_string()))?;
            (0..len).map(|_| d.sample(rng)).collect()
        }
        WeightInit::He => {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| NbqError::Argument(e.to_string()))?;
            (0..len).map(|_| d.sample(rng).clamp(-1.0, 1.0)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

/// Trainable scalars: conv weights and biases plus batch-norm γ and β.
pub fn param_count(net: &Network) -> usize {
    net.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
}

/// `build_nbqnn` with the default initialization.
pub fn build_nbqnn(classes: usize, multiplier: f64, spec: QuantSpec, seed: u64) -> Result<Network> {
    NetworkSpec::nbqnn(classes, multiplier)?.build(spec, false, WeightInit::default(), seed)
}
