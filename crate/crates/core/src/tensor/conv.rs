use rayon::prelude::*;

use super::Tensor;
use crate::error::{arg_err, shape_err, Result};
use crate::gemm::{matmul, matmul_with, transpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weights: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[batch, in_channels, in_h, in_w], &[out_channels, wc, kh, kw]) = (input, weights) else {
            return shape_err(format!(
                "conv2d needs NCHW input and OIHW weights, got {input:?} and {weights:?}"
            ));
        };
        if stride == 0 {
            return arg_err("conv2d stride must be at least 1");
        }
        if wc != in_channels {
            return shape_err(format!(
                "weights expect {wc} input channels, input has {in_channels}"
            ));
        }
        if kh == 0 || kw == 0 || in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return shape_err(format!(
                "kernel {kh}x{kw} does not fit input {in_h}x{in_w} with pad {pad}"
            ));
        }
        Ok(Self {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kh,
            kw,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Rows of the im2col matrix: one per (channel, kernel row, kernel column).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_pixels()
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Input coordinate hit by output `(oy, ox)` at kernel offset `(ky, kx)`,
    /// or `None` when it lands in the zero padding.
    #[inline]
    pub fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.in_h && x < self.in_w).then_some((y, x))
    }
}

/// Output columns `[lo, hi)` of one output row whose input column
/// `ox·stride + kx − pad` is inside the image.
#[inline]
fn valid_cols(g: &ConvGeometry, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride).min(g.out_w);
    let hi = if g.in_w + g.pad > kx { ((g.in_w + g.pad - kx - 1) / g.stride + 1).min(g.out_w) } else { 0 };
    (lo, hi.max(lo))
}

/// Unfolds one CHW sample into a `patch_len × out_pixels` matrix.
pub fn im2col(g: &ConvGeometry, sample: &[f64], col: &mut [f64]) {
    let p = g.out_pixels();
    debug_assert_eq!(sample.len(), g.in_len());
    debug_assert_eq!(col.len(), g.patch_len() * p);
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &sample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let Some(y) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.in_h) else {
                        out.fill(0.0);
                        continue;
                    };
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let src = &plane[y * g.in_w..(y + 1) * g.in_w];
                    let x0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                    } else {
                        for (i, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = src[x0 + i * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters and accumulates columns back into `out`.
pub fn col2im(g: &ConvGeometry, col: &[f64], out: &mut [f64]) {
    let p = g.out_pixels();
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let Some(y) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.in_h) else {
                        continue;
                    };
                    let s = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    let x0 = lo * g.stride + kx - g.pad;
                    let dst = &mut plane[y * g.in_w..(y + 1) * g.in_w];
                    for (i, v) in s.iter().enumerate() {
                        dst[x0 + i * g.stride] += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Writes rows `i0..i0+rows` of the transposed im2col matrix (output pixels
/// by patch entries) k-major into `dst`.
fn pack_patches(g: &ConvGeometry, sample: &[f64], i0: usize, rows: usize, dst: &mut [f64]) {
    let (ow, plane_len) = (g.out_w, g.in_h * g.in_w);
    let oy0 = i0 / ow;
    let same_row = g.stride == 1 && (i0 % ow) + rows <= ow;
    let mut kk = 0;
    for c in 0..g.in_channels {
        let plane = &sample[c * plane_len..(c + 1) * plane_len];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let out = &mut dst[kk * rows..(kk + 1) * rows];
                kk += 1;
                if same_row {
                    let ox0 = i0 % ow;
                    let Some(y) = (oy0 + ky).checked_sub(g.pad).filter(|&y| y < g.in_h) else {
                        out.fill(0.0);
                        continue;
                    };
                    let row = &plane[y * g.in_w..(y + 1) * g.in_w];
                    let x0 = ox0 + kx;
                    if x0 >= g.pad && x0 + rows <= g.in_w + g.pad {
                        out.copy_from_slice(&row[x0 - g.pad..x0 - g.pad + rows]);
                        continue;
                    }
                    for (r, o) in out.iter_mut().enumerate() {
                        *o = (x0 + r)
                            .checked_sub(g.pad)
                            .filter(|&x| x < g.in_w)
                            .map_or(0.0, |x| row[x]);
                    }
                    continue;
                }
                for (r, o) in out.iter_mut().enumerate() {
                    let pix = i0 + r;
                    *o = g.source(pix / ow, pix % ow, ky, kx).map_or(0.0, |(y, x)| plane[y * g.in_w + x]);
                }
            }
        }
    }
}

/// One sample: `dst` (O×P) from `src` (C×H×W) and transposed weights (K×O),
/// with `scratch` holding P×O.
fn conv_sample(g: &ConvGeometry, src: &[f64], w_t: &[f64], scratch: &mut [f64], dst: &mut [f64]) {
    let (kp, p, o) = (g.patch_len(), g.out_pixels(), g.out_channels);
    matmul_with(p, kp, o, w_t, scratch, |i0, rows, buf| pack_patches(g, src, i0, rows, buf));
    for (pix, row) in scratch.chunks(o).enumerate() {
        for (ch, &v) in row.iter().enumerate() {
            dst[ch * p + pix] = v;
        }
    }
}

/// Each output element is `Σ_{c,ky,kx} w·x` fused-accumulated in that order from
/// zero, matching a direct nested loop bit for bit.
pub fn conv2d(input: &Tensor, weights: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), weights.shape(), stride, pad)?;
    let (kp, p, o) = (g.patch_len(), g.out_pixels(), g.out_channels);
    let mut out = vec![0.0; g.batch * g.out_len()];
    if g.batch > 0 && g.out_len() > 0 {
        let w_t = transpose(weights.data(), o, kp);
        out.par_chunks_mut(g.out_len())
            .zip(input.data().par_chunks(g.in_len()))
            .for_each_init(|| vec![0.0; p * o], |scratch, (dst, src)| conv_sample(&g, src, &w_t, scratch, dst));
    }
    Tensor::new(g.output_shape().to_vec(), out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let (gi, gw) = conv2d_backward_opts(input, weights, grad_out, stride, pad, true)?;
    Ok((gi.expect("input gradient requested"), gw))
}

/// `W'[c][o][ky][kx] = W[o][c][k−1−ky][k−1−kx]`: the stride-1 input gradient
/// is a forward conv of the output gradient with `W'` and pad `k−1−pad`.
fn flipped_weights(g: &ConvGeometry, w: &[f64]) -> Vec<f64> {
    let (o, c, kh, kw) = (g.out_channels, g.in_channels, g.kh, g.kw);
    let mut out = vec![0.0; w.len()];
    for oc in 0..o {
        for ic in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    out[((ic * o + oc) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx)] = w[((oc * c + ic) * kh + ky) * kw + kx];
                }
            }
        }
    }
    out
}

/// Writes `kk`-rows `k0..k0+rows` of the im2col matrix pixel-major into
/// `dst` (`dst[pix·rows + r]`).
fn pack_patch_rows(g: &ConvGeometry, sample: &[f64], k0: usize, rows: usize, col_row: &mut [f64], dst: &mut [f64]) {
    let p = g.out_pixels();
    let khw = g.kh * g.kw;
    for r in 0..rows {
        let kk = k0 + r;
        let (c, ky, kx) = (kk / khw, (kk % khw) / g.kw, kk % g.kw);
        let plane = &sample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        let (lo, hi) = valid_cols(g, kx);
        for oy in 0..g.out_h {
            let out = &mut col_row[oy * g.out_w..(oy + 1) * g.out_w];
            let Some(y) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.in_h) else {
                out.fill(0.0);
                continue;
            };
            out[..lo].fill(0.0);
            out[hi..].fill(0.0);
            let src = &plane[y * g.in_w..(y + 1) * g.in_w];
            let x0 = lo * g.stride + kx - g.pad;
            for (i, v) in out[lo..hi].iter_mut().enumerate() {
                *v = src[x0 + i * g.stride];
            }
        }
        for (pix, &v) in col_row[..p].iter().enumerate() {
            dst[pix * rows + r] = v;
        }
    }
}

/// Backward pass; the input gradient is skipped when `need_input` is false
/// (first layer).
pub fn conv2d_backward_opts(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = ConvGeometry::new(input.shape(), weights.shape(), stride, pad)?;
    if grad_out.shape() != g.output_shape() {
        return shape_err(format!(
            "grad_out has shape {:?}, conv output is {:?}",
            grad_out.shape(),
            g.output_shape()
        ));
    }
    let (kp, p, o) = (g.patch_len(), g.out_pixels(), g.out_channels);
    let mut grad_w = vec![0.0; o * kp];
    let empty = g.batch == 0 || g.out_len() == 0 || kp == 0;

    // Weight gradient: per sample `col · gyᵀ` (K×O), summed over samples in
    // order.
    if !empty {
        let mut part = vec![0.0; kp * o];
        let mut col_row = vec![0.0; p];
        for (x, gy) in input.data().chunks(g.in_len()).zip(grad_out.data().chunks(g.out_len())) {
            let gy_t = transpose(gy, o, p);
            matmul_with(kp, p, o, &gy_t, &mut part, |k0, rows, buf| pack_patch_rows(&g, x, k0, rows, &mut col_row, buf));
            for (kk, prow) in part.chunks(o).enumerate() {
                for (oc, &v) in prow.iter().enumerate() {
                    grad_w[oc * kp + kk] += v;
                }
            }
        }
    }
    let grad_w = Tensor::new(weights.shape().to_vec(), grad_w)?;
    if !need_input {
        return Ok((None, grad_w));
    }

    let mut grad_in = vec![0.0; g.batch * g.in_len()];
    if !empty {
        if stride == 1 && pad < g.kh && pad < g.kw && g.kh == g.kw {
            let back = ConvGeometry {
                batch: g.batch,
                in_channels: o,
                in_h: g.out_h,
                in_w: g.out_w,
                out_channels: g.in_channels,
                kh: g.kh,
                kw: g.kw,
                stride: 1,
                pad: g.kh - 1 - pad,
                out_h: g.in_h,
                out_w: g.in_w,
            };
            let wf = flipped_weights(&g, weights.data());
            let wf_t = transpose(&wf, g.in_channels, back.patch_len());
            let mut scratch = vec![0.0; back.out_pixels() * back.out_channels];
            for (dst, gy) in grad_in.chunks_mut(g.in_len()).zip(grad_out.data().chunks(g.out_len())) {
                conv_sample(&back, gy, &wf_t, &mut scratch, dst);
            }
        } else {
            let mut gcol = vec![0.0; kp * p];
            for (dst, gy) in grad_in.chunks_mut(g.in_len()).zip(grad_out.data().chunks(g.out_len())) {
                matmul(&transpose(weights.data(), o, kp), gy, &mut gcol, kp, o, p);
                col2im(&g, &gcol, dst);
            }
        }
    }
    Ok((Some(Tensor::new(input.shape().to_vec(), grad_in)?), grad_w))
}
