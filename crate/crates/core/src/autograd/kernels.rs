//! Dense kernels used by the tape: small GEMM variants and patch expansion.
//!
//! All loops run in a fixed order so results are bit-reproducible.

use crate::scalar::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += a_ip * bj;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            if a_pi == S::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += a_pi * bj;
            }
        }
    }
}

/// Four-lane dot product.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Geometry of one 2-D convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Rows of the patch matrix: `D·Kh·Kw`.
    #[inline]
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    #[inline]
    pub fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }
}

/// `floor((extent + 2·pad − kernel) / stride) + 1`
pub fn conv_out_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    debug_assert!(kernel <= extent + 2 * pad && stride >= 1);
    (extent + 2 * pad - kernel) / stride + 1
}

/// Expands one sample (`D×H×W`) into a `patch_len × out_area` matrix.
pub fn im2col<S: Scalar>(g: &ConvGeometry, sample: &[S], cols: &mut [S]) {
    let area = g.out_area();
    for c in 0..g.in_channels {
        let plane = &sample[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * area..(row + 1) * area];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride_h + ki) as isize - g.pad_h as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if y < 0 || y as usize >= g.in_h {
                        dst_row.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src_row = &plane[y as usize * g.in_w..(y as usize + 1) * g.in_w];
                    for (ox, v) in dst_row.iter_mut().enumerate() {
                        let x = (ox * g.stride_w + kj) as isize - g.pad_w as isize;
                        *v = if x < 0 || x as usize >= g.in_w {
                            S::zero()
                        } else {
                            src_row[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto one sample.
pub fn col2im<S: Scalar>(g: &ConvGeometry, cols: &[S], sample_grad: &mut [S]) {
    let area = g.out_area();
    for c in 0..g.in_channels {
        let plane = &mut sample_grad[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * area..(row + 1) * area];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride_h + ki) as isize - g.pad_h as isize;
                    if y < 0 || y as usize >= g.in_h {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride_w + kj) as isize - g.pad_w as isize;
                        if x >= 0 && (x as usize) < g.in_w {
                            plane[y as usize * g.in_w + x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
