use serde::{Deserialize, Serialize};

use super::act::Activation;
use super::bn::{bn_backward, bn_forward, bn_infer, BnState};
use super::reconstruct;
use crate::error::{shape_err, Result};
use crate::quantizer::{staircase, QuantSpec};
use crate::tensor::{
    avgpool2d, avgpool2d_backward, conv2d, conv2d_backward_opts, maxpool2d, maxpool2d_backward,
    maxpool2d_with_indices, softmax, ConvGeometry, PoolGeometry, Tensor,
};

/// How conv weights enter the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `W̃ = (1−α)·s·staircase(W) + α·W`, weight gradient scaled by α.
    Reconstruct,
    /// Plain `W`; no quantizer anywhere on the weight path.
    FullPrecision,
    /// `s·staircase(W)` alone; what a frozen model computes.
    Quantized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
    /// Whether the weight passes through the quantizer; plain layers ignore
    /// the network's weight mode.
    pub quantized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BnState),
    Act(Activation),
    MaxPool { k: usize, stride: usize },
    AvgPool { k: usize, stride: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    Gamma,
    Beta,
}

/// What a training-mode forward keeps for the backward pass.
#[derive(Debug)]
pub enum LayerCache {
    Conv { input: Tensor, weight: Tensor },
    BatchNorm,
    Act { z: Tensor },
    MaxPool { in_shape: Vec<usize>, indices: Vec<usize> },
    AvgPool { in_shape: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// `[channels, height, width]` of one sample.
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub head: OutputHead,
    pub quant: QuantSpec,
    pub mode: WeightMode,
}

impl Network {
    pub fn new(
        layers: Vec<Layer>,
        input_shape: [usize; 3],
        classes: usize,
        head: OutputHead,
        quant: QuantSpec,
        mode: WeightMode,
    ) -> Result<Self> {
        let net = Self { layers, input_shape, classes, head, quant, mode };
        net.validate()?;
        Ok(net)
    }

    /// Shape-chains every layer and checks the output is `classes` wide.
    pub fn validate(&self) -> Result<()> {
        self.quant.validate()?;
        let shapes = self.layer_shapes()?;
        let last = shapes.last().copied().unwrap_or([self.input_shape[0], self.input_shape[1], self.input_shape[2]]);
        if last[0] * last[1] * last[2] != self.classes {
            return shape_err(format!("network ends in {last:?}, expected {} outputs", self.classes));
        }
        Ok(())
    }

    /// Per-sample output shape `[C, H, W]` after each layer.
    pub fn layer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut cur = self.input_shape;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let full = [1, cur[0], cur[1], cur[2]];
            cur = match layer {
                Layer::Conv(c) => {
                    let g = ConvGeometry::new(&full, c.weight.shape(), c.stride, c.pad)
                        .map_err(|e| crate::NbqError::Shape(format!("layer {i}: {e}")))?;
                    if let Some(b) = &c.bias {
                        if b.len() != g.out_channels {
                            return shape_err(format!("layer {i}: bias length {} for {} channels", b.len(), g.out_channels));
                        }
                    }
                    [g.out_channels, g.out_h, g.out_w]
                }
                Layer::BatchNorm(bn) => {
                    bn.validate()?;
                    if bn.channels() != cur[0] {
                        return shape_err(format!("layer {i}: batch norm over {} channels, input has {}", bn.channels(), cur[0]));
                    }
                    cur
                }
                Layer::Act(_) => cur,
                Layer::MaxPool { k, stride } | Layer::AvgPool { k, stride } => {
                    let g = PoolGeometry::new(&full, *k, *stride)
                        .map_err(|e| crate::NbqError::Shape(format!("layer {i}: {e}")))?;
                    [cur[0], g.out_h, g.out_w]
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Weight tensor the forward pass uses for a conv layer.
    pub fn effective_weight(&self, conv: &ConvLayer) -> Tensor {
        if !conv.quantized {
            return conv.weight.clone();
        }
        match self.mode {
            WeightMode::FullPrecision => conv.weight.clone(),
            WeightMode::Reconstruct => reconstruct(&conv.weight, &self.quant),
            WeightMode::Quantized => conv.weight.map(|w| self.quant.scale * staircase(w.clamp(-1.0, 1.0), self.quant.n)),
        }
    }

    fn weight_grad_factor(&self, conv: &ConvLayer) -> f64 {
        match (conv.quantized, self.mode) {
            (true, WeightMode::Reconstruct) => self.quant.alpha,
            (true, WeightMode::Quantized) => 0.0,
            _ => 1.0,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if [c, h, w] != self.input_shape {
            return shape_err(format!("input samples are {:?}, network expects {:?}", [c, h, w], self.input_shape));
        }
        Ok(())
    }

    /// Eval-mode forward to `N × classes` scores (pre-softmax).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => {
                    let mut y = conv2d(&cur, &self.effective_weight(c), c.stride, c.pad)?;
                    if let Some(b) = &c.bias {
                        add_bias(&mut y, b);
                    }
                    y
                }
                Layer::BatchNorm(bn) => bn_infer(&cur, bn)?,
                Layer::Act(a) => a.forward(&cur),
                Layer::MaxPool { k, stride } => maxpool2d(&cur, *k, *stride)?,
                Layer::AvgPool { k, stride } => avgpool2d(&cur, *k, *stride)?,
            };
        }
        let n = cur.shape()[0];
        cur.reshape(&[n, self.classes])
    }

    /// Network output `a^L`: the logits, or their softmax for a softmax head.
    pub fn output(&self, logits: &Tensor) -> Result<Tensor> {
        match self.head {
            OutputHead::Linear => Ok(logits.clone()),
            OutputHead::Softmax => softmax(logits),
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    /// Training-mode forward; BN uses batch statistics and updates its
    /// running averages.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        let eff: Vec<Option<Tensor>> = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Some(self.effective_weight(c)),
                _ => None,
            })
            .collect();
        for (layer, w) in self.layers.iter_mut().zip(eff) {
            let next = match layer {
                Layer::Conv(c) => {
                    let w = w.expect("conv weight");
                    let mut y = conv2d(&cur, &w, c.stride, c.pad)?;
                    if let Some(b) = &c.bias {
                        add_bias(&mut y, b);
                    }
                    caches.push(LayerCache::Conv { input: cur, weight: w });
                    y
                }
                Layer::BatchNorm(bn) => {
                    let y = bn_forward(&cur, bn, true)?;
                    caches.push(LayerCache::BatchNorm);
                    y
                }
                Layer::Act(a) => {
                    let y = a.forward(&cur);
                    caches.push(LayerCache::Act { z: cur });
                    y
                }
                Layer::MaxPool { k, stride } => {
                    let (y, indices) = maxpool2d_with_indices(&cur, *k, *stride)?;
                    caches.push(LayerCache::MaxPool { in_shape: cur.shape().to_vec(), indices });
                    y
                }
                Layer::AvgPool { k, stride } => {
                    let y = avgpool2d(&cur, *k, *stride)?;
                    caches.push(LayerCache::AvgPool { in_shape: cur.shape().to_vec() });
                    y
                }
            };
            cur = next;
        }
        let n = cur.shape()[0];
        Ok((cur.reshape(&[n, self.classes])?, caches))
    }

    /// Backpropagates `∂C/∂logits` and returns gradients in [`Self::params_mut`] order.
    pub fn backward(&self, caches: &[LayerCache], grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        if caches.len() != self.layers.len() {
            return shape_err("cache list does not match the layer list");
        }
        let n = grad_logits.shape().first().copied().unwrap_or(0);
        let last = self.layer_shapes()?.last().copied().unwrap_or(self.input_shape);
        let mut grad = grad_logits.clone().reshape(&[n, last[0], last[1], last[2]])?;
        let mut rev: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let mut pg = Vec::new();
            grad = match (layer, cache) {
                (Layer::Conv(c), LayerCache::Conv { input, weight }) => {
                    let (gin, mut gw) = conv2d_backward_opts(input, weight, &grad, c.stride, c.pad, i > 0)?;
                    let factor = self.weight_grad_factor(c);
                    if factor != 1.0 {
                        gw = gw.scale(factor);
                    }
                    pg.push(gw);
                    if c.bias.is_some() {
                        pg.push(channel_sums(&grad));
                    }
                    gin.unwrap_or_else(|| Tensor::zeros(input.shape()))
                }
                (Layer::BatchNorm(bn), LayerCache::BatchNorm) => {
                    let (gz, gg, gb) = bn_backward(&grad, bn)?;
                    pg.push(gg);
                    pg.push(gb);
                    gz
                }
                (Layer::Act(a), LayerCache::Act { z }) => a.backward(z, &grad)?,
                (Layer::MaxPool { .. }, LayerCache::MaxPool { in_shape, indices }) => maxpool2d_backward(in_shape, indices, &grad)?,
                (Layer::AvgPool { k, stride }, LayerCache::AvgPool { in_shape }) => {
                    avgpool2d_backward(in_shape, *k, *stride, &grad)?
                }
                _ => return shape_err(format!("layer {i} cache kind does not match the layer")),
            };
            rev.push(pg);
        }
        Ok(rev.into_iter().rev().flatten().collect())
    }

    /// Trainable tensors in a fixed order: per layer, conv weight then bias,
    /// or γ then β.
    pub fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push((ParamKind::ConvWeight, &mut c.weight));
                    if let Some(b) = &mut c.bias {
                        out.push((ParamKind::Bias, b));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((ParamKind::Gamma, &mut bn.gamma));
                    out.push((ParamKind::Beta, &mut bn.beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.shape().to_vec());
                    if let Some(b) = &c.bias {
                        out.push(b.shape().to_vec());
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(bn.gamma.shape().to_vec());
                    out.push(bn.beta.shape().to_vec());
                }
                _ => {}
            }
        }
        out
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BnState> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        })
    }

    /// `max |W̃ − s·staircase(W)|` over quantized conv weights.
    pub fn max_gap(&self) -> f64 {
        let (n, s) = (self.quant.n, self.quant.scale);
        self.convs()
            .filter(|c| c.quantized)
            .map(|c| {
                let wt = self.effective_weight(c);
                wt.data()
                    .iter()
                    .zip(c.weight.data())
                    .fold(0.0f64, |m, (a, &w)| m.max((a - s * staircase(w.clamp(-1.0, 1.0), n)).abs()))
            })
            .fold(0.0, f64::max)
    }

    pub fn clear_caches(&mut self) {
        for bn in self.batch_norms_mut() {
            bn.cache = None;
        }
    }
}

fn add_bias(y: &mut Tensor, b: &Tensor) {
    let shape = y.shape().to_vec();
    let (n, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let d = y.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let bv = b.data()[ch];
            for v in &mut d[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                *v += bv;
            }
        }
    }
}

fn channel_sums(g: &Tensor) -> Tensor {
    let shape = g.shape();
    let (n, c) = (shape[0], shape[1]);
    let hw: usize = shape[2..].iter().product();
    let mut out = vec![0.0; c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += g.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![c], out).expect("channel count")
}

/// Index of the first maximum per row of an `N × C` tensor.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let n = t.shape()[0];
    if n == 0 {
        return Vec::new();
    }
    let c = t.len() / n;
    (0..n)
        .map(|r| {
            let row = &t.data()[r * c..(r + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
