use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{argmax_rows, Network, OutputHead, ParamKind, WeightMode};
use super::optim::{adam_step, clip_unit, sgd_momentum_step, sgd_step, OptimState, Optimizer};
use super::{reconstruct_assign, snap_iterations};
use crate::error::{arg_err, NbqError, Result};
use crate::quantizer::{staircase, QuantSpec};
use crate::tensor::{mse_cost, mse_grad, one_hot, softmax_backward, softmax_xent, Tensor};

const EVAL_CHUNK: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cost {
    /// `(1/2m)·Σ‖y − a^L‖²` against one-hot targets.
    HalfMse,
    SoftmaxXent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine from `lr` down to `final_fraction · lr` over the whole run.
    Cosine { final_fraction: f64 },
    /// Multiply by `factor` every `every` epochs.
    Step { every: usize, factor: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant,
    /// Linear in the step count from the spec's α to `final_alpha`.
    LinearDecay { final_alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub seed: u64,
    pub activation_quant: bool,
    pub quant: QuantSpec,
    pub mode: WeightMode,
    pub cost: Cost,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub alpha_schedule: AlphaSchedule,
}

impl TrainConfig {
    pub fn new(quant: QuantSpec) -> Self {
        Self {
            lr: 0.01,
            batch: 50,
            optimizer: Optimizer::sgd(),
            epochs: 1,
            seed: 0,
            activation_quant: false,
            quant,
            mode: WeightMode::Reconstruct,
            cost: Cost::HalfMse,
            weight_decay: 0.0,
            lr_schedule: LrSchedule::Constant,
            alpha_schedule: AlphaSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return arg_err(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if self.batch < 1 {
            return arg_err("batch size must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return arg_err("weight decay must be non-negative");
        }
        self.optimizer.validate()?;
        self.quant.validate()?;
        if self.mode == WeightMode::Reconstruct {
            self.quant.check_trainable()?;
        }
        if self.mode == WeightMode::Quantized {
            return arg_err("quantized weight mode has no weight gradient and cannot train");
        }
        match self.lr_schedule {
            LrSchedule::Cosine { final_fraction } if !(0.0..=1.0).contains(&final_fraction) => {
                return arg_err("cosine final_fraction must lie in [0, 1]");
            }
            LrSchedule::Step { every, factor } if every == 0 || !(factor > 0.0) => {
                return arg_err("step schedule needs every >= 1 and factor > 0");
            }
            _ => {}
        }
        if let AlphaSchedule::LinearDecay { final_alpha } = self.alpha_schedule {
            if !(final_alpha > 0.0 && final_alpha <= 1.0) {
                return arg_err("final alpha must lie in (0, 1]");
            }
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize, step: u64, total: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine { final_fraction } => {
                let t = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
                let f = final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                self.lr * f
            }
            LrSchedule::Step { every, factor } => self.lr * factor.powi((epoch / every) as i32),
        }
    }

    fn alpha_at(&self, step: u64, total: u64) -> f64 {
        match self.alpha_schedule {
            AlphaSchedule::Constant => self.quant.alpha,
            AlphaSchedule::LinearDecay { final_alpha } => {
                let t = if total <= 1 { 1.0 } else { step as f64 / (total - 1) as f64 };
                self.quant.alpha + (final_alpha - self.quant.alpha) * t
            }
        }
    }
}

/// Cost and `∂C/∂logits` for one batch.
fn cost_and_grad(net: &Network, logits: &Tensor, labels: &[usize], cost: Cost) -> Result<(f64, Tensor)> {
    match cost {
        Cost::SoftmaxXent => softmax_xent(logits, labels),
        Cost::HalfMse => {
            let m = labels.len();
            let y = one_hot(labels, net.classes)?;
            let a = net.output(logits)?;
            let loss = mse_cost(&a, &y, m)?;
            let g = mse_grad(&a, &y, m)?;
            let g = match net.head {
                OutputHead::Softmax => softmax_backward(&a, &g)?,
                OutputHead::Linear => g,
            };
            Ok((loss, g))
        }
    }
}

/// One forward/backward/update on a batch; returns the batch cost before
/// the update.
pub fn train_minibatch(
    net: &mut Network,
    opt: &mut OptimState,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    if x.shape().first() != Some(&labels.len()) {
        return arg_err("batch images and labels differ in count");
    }
    let (logits, caches) = net.forward_train(x)?;
    let (loss, g) = cost_and_grad(net, &logits, labels, cfg.cost)?;
    if !loss.is_finite() {
        return Err(NbqError::Divergence(format!(
            "non-finite cost {loss} at optimizer step {}; max |logit| = {:e}",
            opt.step + 1,
            logits.max_abs()
        )));
    }
    let grads = net.backward(&caches, &g)?;
    drop(caches);
    net.clear_caches();
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(NbqError::Divergence(format!(
            "non-finite gradient in parameter tensor {i} at optimizer step {}; cost was {loss}",
            opt.step + 1
        )));
    }
    opt.ensure(&net.param_shapes());
    opt.step += 1;
    let step = opt.step;
    let OptimState { first, second, .. } = opt;
    for (((kind, p), g), (m, v)) in net
        .params_mut()
        .into_iter()
        .zip(&grads)
        .zip(first.iter_mut().zip(second.iter_mut()))
    {
        let decayed;
        let g = if kind == ParamKind::ConvWeight && cfg.weight_decay > 0.0 {
            decayed = g.zip_map(p, |gi, pi| gi + cfg.weight_decay * pi)?;
            &decayed
        } else {
            g
        };
        match cfg.optimizer {
            Optimizer::Sgd { momentum } if momentum == 0.0 => sgd_step(p, g, lr)?,
            Optimizer::Sgd { momentum } => sgd_momentum_step(p, g, m, lr, momentum)?,
            Optimizer::Adam { beta1, beta2, eps } => adam_step(p, g, m, v, step, lr, beta1, beta2, eps)?,
        }
        if kind == ParamKind::ConvWeight {
            clip_unit(p);
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: Option<f64>,
    pub max_gap: f64,
}

/// Drives epochs over an in-memory training set.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub opt: OptimState,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

pub type Augment<'f> = dyn FnMut(&mut Tensor, &mut ChaCha8Rng) -> Result<()> + 'f;

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, opt: OptimState::default(), epoch: 0, history: Vec::new() })
    }

    fn batches_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.cfg.batch) as u64
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// One shuffled pass; returns the mean batch cost.
    pub fn run_epoch(&mut self, net: &mut Network, x: &Tensor, labels: &[usize], mut augment: Option<&mut Augment<'_>>) -> Result<f64> {
        let n = labels.len();
        if x.shape().first() != Some(&n) {
            return arg_err("training images and labels differ in count");
        }
        if n == 0 {
            return arg_err("empty training set");
        }
        net.mode = self.cfg.mode;
        let mut rng = self.epoch_rng(self.epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let per_epoch = self.batches_per_epoch(n);
        let total = per_epoch * self.cfg.epochs.max(1) as u64;
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, idx) in order.chunks(self.cfg.batch).enumerate() {
            if idx.len() < 2 && n >= 2 {
                continue;
            }
            let step = self.epoch as u64 * per_epoch + b as u64;
            let mut xb = x.select_rows(idx)?;
            if let Some(aug) = augment.as_deref_mut() {
                aug(&mut xb, &mut rng)?;
            }
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            if self.cfg.mode == WeightMode::Reconstruct {
                net.quant.alpha = self.cfg.alpha_at(step, total);
            }
            let lr = self.cfg.lr_at(self.epoch, step, total);
            sum += train_minibatch(net, &mut self.opt, &xb, &yb, &self.cfg, lr)?;
            count += 1;
        }
        self.epoch += 1;
        Ok(sum / count.max(1) as f64)
    }

    /// Runs the remaining configured epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        net: &mut Network,
        x: &Tensor,
        labels: &[usize],
        test: Option<(&Tensor, &[usize])>,
        mut augment: Option<&mut Augment<'_>>,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        while self.epoch < self.cfg.epochs {
            let train_loss = self.run_epoch(net, x, labels, augment.as_deref_mut())?;
            let test_error = match test {
                Some((tx, ty)) => Some(1.0 - evaluate(net, tx, ty)?),
                None => None,
            };
            let m = EpochMetrics { epoch: self.epoch, train_loss, test_error, max_gap: net.max_gap() };
            on_epoch(&m);
            self.history.push(m);
        }
        Ok(self.history.clone())
    }
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Eval-mode top-1 accuracy.
pub fn evaluate(net: &Network, x: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return arg_err("cannot evaluate on an empty set");
    }
    let mut pred = Vec::with_capacity(labels.len());
    let idx: Vec<usize> = (0..labels.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let xb = x.select_rows(chunk)?;
        pred.extend(argmax_rows(&net.logits(&xb)?));
    }
    Ok(accuracy(&pred, labels))
}

/// Applies zero-gradient reconstruct steps until every quantized weight is
/// within `tol` (relative to its initial gap) of its level. Returns the
/// remaining `max |W − s·staircase(W)|`.
pub fn snap_network(net: &mut Network, tol: f64) -> f64 {
    let spec: QuantSpec = net.quant;
    let iters = snap_iterations(spec.alpha, tol);
    for c in net.convs_mut().filter(|c| c.quantized) {
        for _ in 0..iters {
            reconstruct_assign(&mut c.weight, &spec);
        }
    }
    net.convs()
        .filter(|c| c.quantized)
        .flat_map(|c| c.weight.data().iter())
        .fold(0.0f64, |m, &w| m.max((w - spec.scale * staircase(w.clamp(-1.0, 1.0), spec.n)).abs()))
}

/// Re-estimates every BN layer's running statistics as the plain average of
/// batch statistics over `x`, in order, under the network's current weight
/// mode.
pub fn recalibrate_bn(net: &mut Network, x: &Tensor, batch: usize, max_batches: usize) -> Result<()> {
    let n = x.shape().first().copied().unwrap_or(0);
    if n < 2 || batch < 2 {
        return arg_err("recalibration needs at least two samples per batch");
    }
    let saved: Vec<f64> = net.batch_norms_mut().map(|b| b.momentum).collect();
    for bn in net.batch_norms_mut() {
        bn.running_mean = Tensor::zeros(bn.running_mean.shape());
        bn.running_var = Tensor::zeros(bn.running_var.shape());
    }
    let idx: Vec<usize> = (0..n).collect();
    for (b, chunk) in idx.chunks(batch).take(max_batches.max(1)).enumerate() {
        if chunk.len() < 2 {
            break;
        }
        for bn in net.batch_norms_mut() {
            bn.momentum = 1.0 / (b + 1) as f64;
        }
        let xb = x.select_rows(chunk)?;
        net.forward_train(&xb)?;
        net.clear_caches();
    }
    for (bn, m) in net.batch_norms_mut().zip(saved) {
        bn.momentum = m;
    }
    Ok(())
}
