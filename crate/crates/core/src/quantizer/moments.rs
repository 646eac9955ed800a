use serde::{Deserialize, Serialize};

use super::{staircase, QuantSpec};
use crate::error::{NbqError, Result};
use crate::tensor::Tensor;

const MIN_STD: f64 = 1e-12;

/// First two moments of a weight tensor before and after quantization.
/// `mean_q`/`std_q` are for the decoded (scaled) weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean_w: f64,
    pub std_w: f64,
    pub mean_q: f64,
    pub std_q: f64,
    pub scale: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Picks the layer scale so decoded weights have the same standard deviation
/// as `weights`. The mean is left alone; see [`moment_report`].
pub fn moment_match(weights: &Tensor, spec: &QuantSpec) -> Result<QuantSpec> {
    if weights.is_empty() {
        return Err(NbqError::Degenerate("empty weight tensor".into()));
    }
    let data = weights.data();
    let (_, std_w) = mean_std(data.iter().copied());
    if std_w <= MIN_STD {
        return Err(NbqError::Degenerate(format!("weight std {std_w:e} is too small")));
    }
    let q = data.iter().map(|&w| staircase(w.clamp(-1.0, 1.0), spec.n));
    if q.clone().all(|v| v == 0.0) {
        return Err(NbqError::Degenerate("every weight quantizes to zero".into()));
    }
    let (_, std_q) = mean_std(q);
    if std_q <= MIN_STD {
        return Err(NbqError::Degenerate("quantized weights are constant".into()));
    }
    spec.with_scale(std_w / std_q)
}

pub fn moment_report(weights: &Tensor, spec: &QuantSpec) -> Result<MomentReport> {
    if weights.is_empty() {
        return Err(NbqError::Degenerate("empty weight tensor".into()));
    }
    let data = weights.data();
    let (mean_w, std_w) = mean_std(data.iter().copied());
    let (mean_q, std_q) = mean_std(
        data.iter()
            .map(|&w| spec.scale * staircase(w.clamp(-1.0, 1.0), spec.n)),
    );
    Ok(MomentReport { mean_w, std_w, mean_q, std_q, scale: spec.scale })
}
