use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_adam_eps() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => arg_err("sgd momentum must lie in [0, 1)"),
            Optimizer::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                arg_err("adam needs beta1, beta2 in [0, 1) and eps > 0")
            }
            _ => Ok(()),
        }
    }
}

/// Per-parameter optimizer memory, one slot pair per parameter tensor in
/// network order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimState {
    pub fn ensure(&mut self, shapes: &[Vec<usize>]) {
        if self.first.len() != shapes.len() {
            self.first = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            self.second = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        }
    }
}

/// `p ← p − η·g`.
pub fn sgd_step(p: &mut Tensor, g: &Tensor, lr: f64) -> Result<()> {
    p.check_same_shape(g)?;
    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
        *x -= lr * d;
    }
    Ok(())
}

/// Heavy-ball momentum: `v ← μv + g`, `p ← p − ηv`.
pub fn sgd_momentum_step(p: &mut Tensor, g: &Tensor, vel: &mut Tensor, lr: f64, momentum: f64) -> Result<()> {
    p.check_same_shape(g)?;
    vel.check_same_shape(g)?;
    for ((x, d), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
        *v = momentum * *v + d;
        *x -= lr * *v;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    p: &mut Tensor,
    g: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    p.check_same_shape(g)?;
    m.check_same_shape(g)?;
    v.check_same_shape(g)?;
    let t = step.max(1) as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((x, &d), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
        *mi = beta1 * *mi + (1.0 - beta1) * d;
        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
        *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
    }
    Ok(())
}

pub fn clip_unit(p: &mut Tensor) {
    for x in p.data_mut() {
        *x = x.clamp(-1.0, 1.0);
    }
}
