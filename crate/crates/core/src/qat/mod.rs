//! Quantization-aware training.
//!
//! The forward pass sees `W̃ = (1−α)·s·staircase(W) + α·W`. Inside a
//! quantization cell `∂W̃/∂W = α` exactly, so the weight gradient is α times
//! the ordinary one and never vanishes.

mod act;
mod bn;
mod checkpoint;
mod freeze;
mod network;
mod optim;
mod train;

pub use act::{quantize_activation_backward, quantize_activation_forward, Activation};
pub use bn::{bn_backward, bn_forward, bn_infer, BnCache, BnState, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use freeze::{freeze, FreezeReport, FrozenLayer, FrozenNetwork, LayerFreezeReport};
pub use network::{argmax_rows, ConvLayer, Layer, LayerCache, Network, OutputHead, ParamKind, WeightMode};
pub use optim::{adam_step, clip_unit, sgd_momentum_step, sgd_step, OptimState, Optimizer};
pub use train::{
    accuracy, evaluate, recalibrate_bn, snap_network, train_minibatch, AlphaSchedule, Augment, Cost, EpochMetrics,
    LrSchedule, TrainConfig, Trainer,
};

use crate::error::{shape_err, Result};
use crate::quantizer::{staircase, QuantSpec};
use crate::tensor::Tensor;

/// `(1−α)·s·staircase(W) + α·W`, with `W` clipped to `[−1, 1]` for the
/// quantizer. Evaluated as `q + α·(W − q)` so the gap to the level keeps its
/// relative precision.
pub fn reconstruct(w: &Tensor, spec: &QuantSpec) -> Tensor {
    let (a, s, n) = (spec.alpha, spec.scale, spec.n);
    if a == 1.0 {
        return w.clone();
    }
    w.map(|v| {
        let q = s * staircase(v.clamp(-1.0, 1.0), n);
        q + a * (v - q)
    })
}

/// Dense-layer form `α·𝒯ᵀ·a`: `err` is `N × out`, `act_prev` is `N × in`,
/// result is `out × in`.
pub fn weight_grad(err: &Tensor, act_prev: &Tensor, alpha: f64) -> Result<Tensor> {
    let (&[n, out], &[n2, inp]) = (err.shape(), act_prev.shape()) else {
        return shape_err(format!(
            "weight_grad needs N×out and N×in, got {:?} and {:?}",
            err.shape(),
            act_prev.shape()
        ));
    };
    if n != n2 {
        return shape_err(format!("batch sizes differ: {n} vs {n2}"));
    }
    let mut g = vec![0.0; out * inp];
    for s in 0..n {
        for j in 0..out {
            let e = err.data()[s * out + j];
            for k in 0..inp {
                g[j * inp + k] += e * act_prev.data()[s * inp + k];
            }
        }
    }
    for v in &mut g {
        *v *= alpha;
    }
    Tensor::new(vec![out, inp], g)
}

/// One zero-gradient update `W ← W̃`.
pub fn reconstruct_assign(w: &mut Tensor, spec: &QuantSpec) {
    *w = reconstruct(w, spec);
}

/// Zero-gradient iterations needed to shrink the gap to the level by a factor
/// `tol`: `ceil(ln tol / ln α)`.
pub fn snap_iterations(alpha: f64, tol: f64) -> usize {
    if alpha <= 0.0 {
        return 1;
    }
    if alpha >= 1.0 || tol >= 1.0 {
        return 0;
    }
    (tol.ln() / alpha.ln()).ceil() as usize
}
