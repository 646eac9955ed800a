use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::quantizer::{staircase, QuantSpec};
use crate::tensor::{relu, relu_backward, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    /// `staircase(clamp(z, −1, 1))` with the scaled straight-through backward.
    Quantized { n: u8, lambda: f64 },
}

impl Activation {
    pub fn quantized(spec: &QuantSpec) -> Self {
        Activation::Quantized { n: spec.n, lambda: spec.lambda }
    }

    pub fn forward(&self, z: &Tensor) -> Tensor {
        match *self {
            Activation::Relu => relu(z),
            Activation::Identity => z.clone(),
            Activation::Quantized { n, .. } => z.map(|v| quantize_scalar(v, n)),
        }
    }

    pub fn backward(&self, z: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        match *self {
            Activation::Relu => relu_backward(z, grad_out),
            Activation::Identity => {
                z.check_same_shape(grad_out)?;
                Ok(grad_out.clone())
            }
            Activation::Quantized { lambda, .. } => estimator(z, grad_out, lambda),
        }
    }

    /// Scalar form for inference paths.
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Identity => v,
            Activation::Quantized { n, .. } => quantize_scalar(v, n),
        }
    }
}

fn quantize_scalar(v: f64, n: u8) -> f64 {
    staircase(v.clamp(-1.0, 1.0), n)
}

fn estimator(z: &Tensor, grad_out: &Tensor, lambda: f64) -> Result<Tensor> {
    z.zip_map(grad_out, |v, g| if v.abs() <= 1.0 { lambda * g } else { 0.0 })
}

pub fn quantize_activation_forward(z: &Tensor, spec: &QuantSpec) -> Tensor {
    Activation::quantized(spec).forward(z)
}

/// `λ · grad_out · 1{|z| ≤ 1}`.
pub fn quantize_activation_backward(grad_out: &Tensor, z: &Tensor, spec: &QuantSpec) -> Result<Tensor> {
    estimator(z, grad_out, spec.lambda)
}
