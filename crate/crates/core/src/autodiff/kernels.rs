//! Raw array kernels behind the tape ops.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, ShapeBuilder};

use super::Real;

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
///
/// `op(a)` is `m x k` (stored `k x m` when `trans_a`), `op(b)` is `k x n`
/// (stored `n x k` when `trans_b`), `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<R: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: R,
    a: &[R],
    b: &[R],
    beta: R,
    c: &mut [R],
) {
    let a = if trans_a {
        ArrayView2::from_shape((m, k).strides((1, m)), a)
    } else {
        ArrayView2::from_shape((m, k), a)
    }
    .expect("gemm: lhs extent");
    let b = if trans_b {
        ArrayView2::from_shape((k, n).strides((1, k)), b)
    } else {
        ArrayView2::from_shape((k, n), b)
    }
    .expect("gemm: rhs extent");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm: output extent");
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

/// Output spatial size of a valid (unpadded) convolution.
pub(crate) fn conv_out(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `[C, H, W]` image into a `[C*k*k, OH*OW]` column matrix.
pub(crate) fn im2col<R: Real>(g: &ConvGeom, image: &[R], cols: &mut [R]) {
    let p = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let src = (c * g.height + oy * g.stride + ki) * g.width + kj;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        *d = image[src + ox * g.stride];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an image gradient.
pub(crate) fn col2im<R: Real>(g: &ConvGeom, cols: &[R], image: &mut [R]) {
    let p = g.positions();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let base = (c * g.height + oy * g.stride + ki) * g.width + kj;
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        image[base + ox * g.stride] += v;
                    }
                }
            }
        }
    }
}
