use super::Tensor;
use crate::error::{arg_err, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(shape: &[usize], k: usize, stride: usize) -> Result<Self> {
        let &[batch, channels, in_h, in_w] = shape else {
            return shape_err(format!("pooling needs an NCHW tensor, got {shape:?}"));
        };
        if k == 0 || stride == 0 {
            return arg_err("pool window and stride must be at least 1");
        }
        if in_h < k || in_w < k {
            return shape_err(format!("pool window {k} larger than input {in_h}x{in_w}"));
        }
        Ok(Self {
            batch,
            channels,
            in_h,
            in_w,
            k,
            stride,
            out_h: (in_h - k) / stride + 1,
            out_w: (in_w - k) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.out_h, self.out_w]
    }

    fn planes(&self) -> usize {
        self.batch * self.channels
    }
}

pub fn maxpool2d(input: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    Ok(maxpool2d_with_indices(input, k, stride)?.0)
}

/// Also returns, for every output element, the flat input index it came from.
/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool2d_with_indices(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let g = PoolGeometry::new(input.shape(), k, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(g.planes() * g.out_h * g.out_w);
    let mut idx = Vec::with_capacity(out.capacity());
    for plane in 0..g.planes() {
        let base = plane * g.in_h * g.in_w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = base + oy * g.stride * g.in_w + ox * g.stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * g.stride + ky) * g.in_w + ox * g.stride + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(g.output_shape().to_vec(), out)?, idx))
}

pub fn maxpool2d_backward(input_shape: &[usize], indices: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if indices.len() != grad_out.len() {
        return shape_err(format!(
            "{} argmax indices for a gradient of {} elements",
            indices.len(),
            grad_out.len()
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let gd = grad.data_mut();
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        let Some(slot) = gd.get_mut(i) else {
            return shape_err(format!("argmax index {i} outside input of {input_shape:?}"));
        };
        *slot += g;
    }
    Ok(grad)
}

pub fn avgpool2d(input: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let g = PoolGeometry::new(input.shape(), k, stride)?;
    let x = input.data();
    let inv = 1.0 / (k * k) as f64;
    let mut out = Vec::with_capacity(g.planes() * g.out_h * g.out_w);
    for plane in 0..g.planes() {
        let base = plane * g.in_h * g.in_w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut s = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        s += x[base + (oy * g.stride + ky) * g.in_w + ox * g.stride + kx];
                    }
                }
                out.push(s * inv);
            }
        }
    }
    Tensor::new(g.output_shape().to_vec(), out)
}

pub fn avgpool2d_backward(input_shape: &[usize], k: usize, stride: usize, grad_out: &Tensor) -> Result<Tensor> {
    let g = PoolGeometry::new(input_shape, k, stride)?;
    if grad_out.shape() != g.output_shape() {
        return shape_err(format!(
            "grad_out has shape {:?}, pool output is {:?}",
            grad_out.shape(),
            g.output_shape()
        ));
    }
    let inv = 1.0 / (k * k) as f64;
    let mut grad = Tensor::zeros(input_shape);
    let (gd, gy) = (grad.data_mut(), grad_out.data());
    for plane in 0..g.planes() {
        let base = plane * g.in_h * g.in_w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let v = gy[(plane * g.out_h + oy) * g.out_w + ox] * inv;
                for ky in 0..k {
                    for kx in 0..k {
                        gd[base + (oy * g.stride + ky) * g.in_w + ox * g.stride + kx] += v;
                    }
                }
            }
        }
    }
    Ok(grad)
}
