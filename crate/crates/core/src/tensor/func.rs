use super::Tensor;
use crate::error::{arg_err, shape_err, Result};

pub fn relu(z: &Tensor) -> Tensor {
    z.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// θ′(0) is taken as 0.
pub fn relu_backward(z: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    z.zip_map(grad_out, |v, g| if v > 0.0 { g } else { 0.0 })
}

/// Half mean squared error `(1/2m)·Σ‖y − a‖²`.
pub fn mse_cost(pred: &Tensor, target: &Tensor, m: usize) -> Result<f64> {
    if m == 0 {
        return arg_err("mse_cost batch size must be at least 1");
    }
    pred.check_same_shape(target)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, y)| (y - a) * (y - a))
        .sum();
    Ok(s / (2.0 * m as f64))
}

/// `∂C/∂a = (a − y)/m`.
pub fn mse_grad(pred: &Tensor, target: &Tensor, m: usize) -> Result<Tensor> {
    if m == 0 {
        return arg_err("mse_grad batch size must be at least 1");
    }
    let inv = 1.0 / m as f64;
    pred.zip_map(target, |a, y| (a - y) * inv)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    let d = t.data_mut();
    for (row, &l) in labels.iter().enumerate() {
        if l >= classes {
            return arg_err(format!("label {l} out of range for {classes} classes"));
        }
        d[row * classes + l] = 1.0;
    }
    Ok(t)
}

fn rows_of(t: &Tensor) -> Result<(usize, usize)> {
    let Some(&n) = t.shape().first() else {
        return shape_err("softmax needs a batch axis");
    };
    if n == 0 {
        return Ok((0, 0));
    }
    Ok((n, t.len() / n))
}

/// Row-wise softmax over everything after the leading axis. Output keeps the
/// input shape, so `N×C×1×1` logits work as well as `N×C`.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = rows_of(logits)?;
    let mut out = logits.clone();
    for r in 0..n {
        let row = &mut out.data_mut()[r * c..(r + 1) * c];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax given its output `probs`.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    probs.check_same_shape(grad_out)?;
    let (n, c) = rows_of(probs)?;
    let mut out = grad_out.clone();
    for r in 0..n {
        let p = &probs.data()[r * c..(r + 1) * c];
        let g = &mut out.data_mut()[r * c..(r + 1) * c];
        let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi = pi * (*gi - dot);
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = rows_of(logits)?;
    if n != labels.len() {
        return shape_err(format!("{n} logit rows but {} labels", labels.len()));
    }
    if n == 0 {
        return arg_err("softmax_xent on an empty batch");
    }
    let mut grad = softmax(logits)?;
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        if l >= c {
            return arg_err(format!("label {l} out of range for {c} classes"));
        }
        let row = &logits.data()[r * c..(r + 1) * c];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        loss += lse - row[l];
        let g = &mut grad.data_mut()[r * c..(r + 1) * c];
        g[l] -= 1.0;
        for v in g.iter_mut() {
            *v *= inv;
        }
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn relu_values_and_derivative() {
        let z = t(&[4], &[-1.0, 2.0, 0.0, 3.0]);
        assert_eq!(relu(&z).data(), &[0.0, 2.0, 0.0, 3.0]);
        let g = relu_backward(&z, &Tensor::filled(&[4], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn mse_examples() {
        let z = Tensor::zeros(&[2]);
        assert_eq!(mse_cost(&z, &z, 1).unwrap(), 0.0);
        assert_eq!(mse_cost(&t(&[2], &[1.0, 0.0]), &z, 1).unwrap(), 0.5);
        let p = t(&[2, 2], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(mse_cost(&p, &Tensor::zeros(&[2, 2]), 2).unwrap(), 0.5);
        assert!(mse_cost(&z, &z, 0).is_err());
        assert_eq!(mse_grad(&p, &Tensor::zeros(&[2, 2]), 2).unwrap().data(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn xent_uniform_and_confident() {
        let (l, g) = softmax_xent(&Tensor::zeros(&[1, 10]), &[3]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!(g.sum().abs() < 1e-15);
        let mut big = Tensor::zeros(&[1, 10]);
        big.data_mut()[7] = 1000.0;
        let (l, _) = softmax_xent(&big, &[7]).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_fn(&[3, 5, 1, 1], |i| i as f64 * 0.7 - 4.0);
        let p = softmax(&x).unwrap();
        for r in 0..3 {
            let s: f64 = p.data()[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_rejects_bad_label() {
        assert!(one_hot(&[0, 10], 10).is_err());
        assert_eq!(one_hot(&[1], 3).unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}
