//! Deterministic dense matrix products.
//!
//! Every output element is accumulated strictly in ascending inner-index order
//! starting from `0.0` with one fused multiply-add per term:
//! `s = fma(a_k, b_k, s)`. A naive triple loop using `f64::mul_add` produces
//! the same bits. Vectorization happens across output columns only.

const MR: usize = 8;
const NR: usize = 16;
/// Widest packed column panel on the AVX-512 path.
#[cfg(target_arch = "x86_64")]
const WIDE: usize = 32;
#[cfg(not(target_arch = "x86_64"))]
const WIDE: usize = NR;

/// `c[m×n] = a[m×k] · b[k×n]`, row-major, overwriting `c`.
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k, "lhs length");
    matmul_with(m, k, n, b, c, |i0, rows, dst| {
        for kk in 0..k {
            for r in 0..rows {
                dst[kk * rows + r] = a[(i0 + r) * k + kk];
            }
        }
    });
}

/// `c = A · b` where `A` (`m × k`) is never materialized: `pack_a(i0, rows,
/// dst)` must write rows `i0..i0+rows` of `A` k-major, `dst[kk·rows + r] =
/// A[i0 + r][kk]`.
pub fn matmul_with(
    m: usize,
    k: usize,
    n: usize,
    b: &[f64],
    c: &mut [f64],
    mut pack_a: impl FnMut(usize, usize, &mut [f64]),
) {
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(c.len(), m * n, "output length");
    if m == 0 || n == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    let simd = std::is_x86_feature_detected!("avx512f");
    #[cfg(not(target_arch = "x86_64"))]
    let simd = false;
    let wide = if simd { WIDE } else { NR };
    // Column panels of b, each packed as a row-major k × width block.
    let mut panels: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut j0 = 0;
    while j0 < n {
        let width = if n - j0 >= wide {
            wide
        } else if simd && n - j0 >= 8 {
            (n - j0) / 8 * 8
        } else {
            n - j0
        };
        let mut p = vec![0.0; k * width];
        for kk in 0..k {
            p[kk * width..(kk + 1) * width].copy_from_slice(&b[kk * n + j0..kk * n + j0 + width]);
        }
        panels.push((j0, width, p));
        j0 += width;
    }
    let mut strip = vec![0.0; k * MR];
    let mut i0 = 0;
    while i0 < m {
        let rows = MR.min(m - i0);
        pack_a(i0, rows, &mut strip[..k * rows]);
        for (j0, width, panel) in &panels {
            if rows == MR {
                strip_panel(&strip, panel, *width, c, i0, *j0, k, n, simd);
            } else {
                for r in 0..rows {
                    for j in 0..*width {
                        let mut s = 0.0;
                        for kk in 0..k {
                            s = strip[kk * rows + r].mul_add(panel[kk * width + j], s);
                        }
                        c[(i0 + r) * n + j0 + j] = s;
                    }
                }
            }
        }
        i0 += rows;
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn strip_panel(strip: &[f64], panel: &[f64], width: usize, c: &mut [f64], i0: usize, j0: usize, k: usize, n: usize, simd: bool) {
    #[cfg(target_arch = "x86_64")]
    if simd && width.is_multiple_of(8) && width <= 32 {
        // SAFETY: avx512f was detected; the strip holds k·MR values, the
        // panel k·width, and rows i0..i0+MR, columns j0..j0+width lie in c.
        unsafe {
            match width {
                8 => kernel_avx512::<8, 1>(strip, panel, width, c, i0, 0, j0, k, n),
                16 => kernel_avx512::<8, 2>(strip, panel, width, c, i0, 0, j0, k, n),
                24 => kernel_avx512::<8, 3>(strip, panel, width, c, i0, 0, j0, k, n),
                _ => {
                    kernel_avx512::<8, 2>(strip, panel, width, c, i0, 0, j0, k, n);
                    kernel_avx512::<8, 2>(strip, &panel[16..], width, c, i0, 0, j0 + 16, k, n);
                }
            }
        }
        return;
    }
    let _ = simd;
    if width == NR {
        let mut acc = [[0.0f64; NR]; MR];
        for kk in 0..k {
            let brow: &[f64; NR] = panel[kk * NR..(kk + 1) * NR].try_into().unwrap();
            for r in 0..MR {
                let av = strip[kk * MR + r];
                for j in 0..NR {
                    acc[r][j] = av.mul_add(brow[j], acc[r][j]);
                }
            }
        }
        for r in 0..MR {
            c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(&acc[r]);
        }
        return;
    }
    for r in 0..MR {
        for j in 0..width {
            let mut s = 0.0;
            for kk in 0..k {
                s = strip[kk * MR + r].mul_add(panel[kk * width + j], s);
            }
            c[(i0 + r) * n + j0 + j] = s;
        }
    }
}

/// Rows `r0..r0+R` of an MR-row strip against a `V·8`-wide panel.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn kernel_avx512<const R: usize, const V: usize>(
    strip: &[f64],
    panel: &[f64],
    ldb: usize,
    c: &mut [f64],
    i0: usize,
    r0: usize,
    j0: usize,
    k: usize,
    n: usize,
) {
    use std::arch::x86_64::*;
    let mut acc = [[_mm512_setzero_pd(); V]; R];
    let bp = panel.as_ptr();
    let ap = strip.as_ptr().add(r0);
    for kk in 0..k {
        let brow = bp.add(kk * ldb);
        let bv: [__m512d; V] = std::array::from_fn(|v| _mm512_loadu_pd(brow.add(v * 8)));
        for r in 0..R {
            let av = _mm512_set1_pd(*ap.add(kk * MR + r));
            for v in 0..V {
                acc[r][v] = _mm512_fmadd_pd(av, bv[v], acc[r][v]);
            }
        }
    }
    let cp = c.as_mut_ptr();
    for r in 0..R {
        for v in 0..V {
            _mm512_storeu_pd(cp.add((i0 + r0 + r) * n + j0 + v * 8), acc[r][v]);
        }
    }
}

/// Row-major transpose of an `rows × cols` matrix.
pub fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![0.0; src.len()];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for cc in c0..(c0 + B).min(cols) {
                    out[cc * rows + r] = src[r * cols + cc];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for kk in 0..k {
                    s = a[i * k + kk].mul_add(b[kk * n + j], s);
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_naive_bitwise_on_odd_shapes() {
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for &(m, k, n) in &[(1, 1, 1), (5, 7, 19), (4, 3, 16), (9, 33, 40), (13, 2, 3), (17, 45, 130), (8, 300, 24)] {
            let a: Vec<f64> = (0..m * k).map(|_| next()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| next()).collect();
            let mut c = vec![f64::NAN; m * n];
            matmul(&a, &b, &mut c, m, k, n);
            let r = naive(&a, &b, m, k, n);
            for (x, y) in c.iter().zip(&r) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn transpose_round_trip() {
        let v: Vec<f64> = (0..35).map(|i| i as f64).collect();
        let t = transpose(&v, 5, 7);
        assert_eq!(t[5], 1.0);
        assert_eq!(transpose(&t, 7, 5), v);
    }
}
