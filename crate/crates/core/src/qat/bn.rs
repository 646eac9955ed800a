use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, NbqError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Batch statistics kept from the last training-mode forward.
#[derive(Clone, Debug, PartialEq)]
pub struct BnCache {
    pub centered: Tensor,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
    #[serde(skip)]
    pub cache: Option<BnCache>,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for t in [&self.beta, &self.running_mean, &self.running_var] {
            if t.len() != c {
                return shape_err(format!("batch-norm parameter of length {} for {c} channels", t.len()));
            }
        }
        if !(self.eps > 0.0) {
            return arg_err("batch-norm eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return arg_err("batch-norm momentum must lie in [0, 1]");
        }
        if self.running_var.data().iter().any(|&v| v < 0.0) {
            return arg_err("batch-norm running variance must be non-negative");
        }
        Ok(())
    }

    /// Per-channel `(scale, offset)` such that eval-mode output is `scale·z + offset`.
    pub fn folded(&self) -> (Vec<f64>, Vec<f64>) {
        let mut s = Vec::with_capacity(self.channels());
        let mut t = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let sc = self.gamma.data()[c] / (self.running_var.data()[c] + self.eps).sqrt();
            s.push(sc);
            t.push(self.beta.data()[c] - sc * self.running_mean.data()[c]);
        }
        (s, t)
    }
}

/// `(batch, channels, spatial)` of an NCHW or N×C tensor.
fn layout(z: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let shape = z.shape();
    if shape.len() < 2 || shape[1] != channels {
        return shape_err(format!("batch norm over {channels} channels got shape {shape:?}"));
    }
    let spatial = shape[2..].iter().product();
    Ok((shape[0], spatial))
}

/// Lane-split sum so the reduction is not one long dependency chain.
fn lane_sum(xs: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let mut chunks = xs.chunks_exact(8);
    for ch in &mut chunks {
        for (a, v) in acc.iter_mut().zip(ch) {
            *a += v;
        }
    }
    let tail: f64 = chunks.remainder().iter().sum();
    acc.iter().sum::<f64>() + tail
}

fn lane_dot(xs: &[f64], ys: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (mut cx, mut cy) = (xs.chunks_exact(8), ys.chunks_exact(8));
    for (a8, b8) in (&mut cx).zip(&mut cy) {
        for ((a, x), y) in acc.iter_mut().zip(a8).zip(b8) {
            *a += x * y;
        }
    }
    let tail: f64 = cx.remainder().iter().zip(cy.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// Eval-mode normalization with the running statistics.
pub fn bn_infer(z: &Tensor, state: &BnState) -> Result<Tensor> {
    let c = state.channels();
    let (_, hw) = layout(z, c)?;
    let (s, t) = state.folded();
    let mut out = z.clone();
    for (i, plane) in out.data_mut().chunks_mut(hw.max(1)).enumerate() {
        let (sc, off) = (s[i % c], t[i % c]);
        for v in plane {
            *v = sc * *v + off;
        }
    }
    Ok(out)
}

pub fn bn_forward(z: &Tensor, state: &mut BnState, training: bool) -> Result<Tensor> {
    let c = state.channels();
    let (n, hw) = layout(z, c)?;
    if !training {
        return bn_infer(z, state);
    }
    let count = n * hw;
    if count < 2 {
        return arg_err("training-mode batch norm needs at least two values per channel");
    }
    let inv = 1.0 / count as f64;
    let mut centered = vec![0.0; z.len()];
    let mut out = vec![0.0; z.len()];
    let (mut means, mut vars, mut stds) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    let zd = z.data();
    for ch in 0..c {
        let planes = move |b: usize| {
            let base = (b * c + ch) * hw;
            base..base + hw
        };
        let sum: f64 = (0..n).map(|b| lane_sum(&zd[planes(b)])).sum();
        let mu = sum * inv;
        let (g, be) = (state.gamma.data()[ch], state.beta.data()[ch]);
        let mut sq = 0.0;
        for b in 0..n {
            let r = planes(b);
            for (d, &x) in centered[r.clone()].iter_mut().zip(&zd[r.clone()]) {
                *d = x - mu;
            }
            sq += lane_dot(&centered[r.clone()], &centered[r]);
        }
        let var = sq * inv;
        let sd = (var + state.eps).sqrt();
        let scale = g / sd;
        for b in 0..n {
            let r = planes(b);
            for (o, &d) in out[r.clone()].iter_mut().zip(&centered[r]) {
                *o = scale * d + be;
            }
        }
        means[ch] = mu;
        vars[ch] = var;
        stds[ch] = sd;
        let m = state.momentum;
        let unbiased = var * count as f64 / (count - 1) as f64;
        let rm = &mut state.running_mean.data_mut()[ch];
        *rm = (1.0 - m) * *rm + m * mu;
        let rv = &mut state.running_var.data_mut()[ch];
        *rv = (1.0 - m) * *rv + m * unbiased;
    }
    let shape = z.shape().to_vec();
    state.cache = Some(BnCache { centered: Tensor::new(shape.clone(), centered)?, mean: means, var: vars, std: stds });
    Tensor::new(shape, out)
}

/// Gradients of the cost with respect to the normalized layer's input, γ and β.
///
/// With `g = ∂C/∂ẑ` (activation derivative already applied), `d = z − μ`,
/// `σ = sqrt(σ² + eps)` and `m` values per channel:
///
/// ```text
/// ∂C/∂σ² = −½ γ σ⁻³ Σ g·d
/// ∂C/∂μ  = −(γ/σ) Σ g − (2/m) ∂C/∂σ² Σ d
/// 𝒯      = (γ/σ) g + (2/m) ∂C/∂σ² d + (1/m) ∂C/∂μ
/// ```
pub fn bn_backward(grad_out: &Tensor, state: &BnState) -> Result<(Tensor, Tensor, Tensor)> {
    let cache = state
        .cache
        .as_ref()
        .ok_or_else(|| NbqError::State("bn_backward needs a training-mode forward first".into()))?;
    if grad_out.shape() != cache.centered.shape() {
        return shape_err(format!(
            "grad_out shape {:?} differs from cached input {:?}",
            grad_out.shape(),
            cache.centered.shape()
        ));
    }
    let c = state.channels();
    let (n, hw) = layout(grad_out, c)?;
    let m = (n * hw) as f64;
    let mut grad_z = grad_out.clone();
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    let gd = grad_out.data();
    let dd = cache.centered.data();
    let out = grad_z.data_mut();
    for ch in 0..c {
        let planes = move |b: usize| {
            let base = (b * c + ch) * hw;
            base..base + hw
        };
        let gamma = state.gamma.data()[ch];
        let sd = cache.std[ch];
        let (mut sum_g, mut sum_gd, mut sum_d) = (0.0, 0.0, 0.0);
        for b in 0..n {
            let r = planes(b);
            sum_g += lane_sum(&gd[r.clone()]);
            sum_gd += lane_dot(&gd[r.clone()], &dd[r.clone()]);
            sum_d += lane_sum(&dd[r]);
        }
        let d_var = -0.5 * gamma * sd.powi(-3) * sum_gd;
        let d_mu = -(gamma / sd) * sum_g - 2.0 / m * d_var * sum_d;
        let (kg, kd, k0) = (gamma / sd, 2.0 / m * d_var, d_mu / m);
        for b in 0..n {
            let r = planes(b);
            for (o, (&g, &d)) in out[r.clone()].iter_mut().zip(gd[r.clone()].iter().zip(&dd[r])) {
                *o = kg * g + kd * d + k0;
            }
        }
        g_gamma[ch] = sum_gd / sd;
        g_beta[ch] = sum_g;
    }
    Ok((grad_z, Tensor::new(vec![c], g_gamma)?, Tensor::new(vec![c], g_beta)?))
}
